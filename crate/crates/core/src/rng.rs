//! Counter-based deterministic random number generation.
//!
//! Every random draw in this crate flows from a `(seed, stream)` pair: the
//! global seed and a per-sample index. Each pair yields an independent,
//! reproducible stream, so parallel sample generation is order-independent
//! and bit-identical across worker counts and platforms.

use crate::num;

/// splitmix64 step; used to expand a `(seed, stream)` pair into generator state.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// xoshiro256** generator seeded from a `(seed, stream)` counter pair.
#[derive(Clone, Debug)]
pub struct SampleRng {
    s: [u64; 4],
}

impl SampleRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        // Decorrelate the stream index before mixing so that nearby indices
        // land far apart in splitmix space.
        let mut sm = seed ^ stream.wrapping_mul(0xA076_1D64_78BD_642F);
        let mut s = [0u64; 4];
        for slot in s.iter_mut() {
            *slot = splitmix64(&mut sm);
        }
        if s == [0, 0, 0, 0] {
            s[0] = 1;
        }
        SampleRng { s }
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1]
            .wrapping_mul(5)
            .rotate_left(7)
            .wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[-1, 1]`.
    pub fn uniform_pm1(&mut self) -> f64 {
        2.0 * self.uniform() - 1.0
    }

    /// Standard normal via Box-Muller; consumes two uniforms per draw.
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform(); // in (0, 1]
        let u2 = self.uniform();
        num::sqrt(-2.0 * num::ln(u1)) * num::cos(core::f64::consts::TAU * u2)
    }
}

//! Exact P1 finite-element quantities on one grid level.
//!
//! The central object is the 6-channel tensor of per-vertex triangle
//! integrals: channel `k` at vertex `i` holds the integral of the nodal
//! coefficient over the `k`-th adjacent triangle of `i`. Operator
//! application is then six 3x3 stencil passes, each multiplied pointwise by
//! one channel and summed -- no matrix is ever assembled on the production
//! path. Dense element-loop assembly is kept as an independent oracle.
//!
//! Summation orders are fixed (window offsets row-major, then channels
//! ascending) so the convolutional realisation in [`crate::convnet`]
//! reproduces every result bit-for-bit.

use alloc::vec::Vec;
use core::fmt;

use crate::grid::{ExtendedField, Field, GridLevel, TRI_VERTEX_OFFSETS};
use crate::linalg::{BandedSpd, CsrMatrix, DenseMatrix};
use crate::num;

/// Rows a dense assembly is willing to materialise.
pub const DENSE_GUARD: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub enum FeError {
    DimensionMismatch { expected: usize, got: usize },
    SizeGuardExceeded { dof: usize, max: usize },
}

impl fmt::Display for FeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeError::DimensionMismatch { expected, got } => {
                write!(f, "field length {got} does not match expected dof {expected}")
            }
            FeError::SizeGuardExceeded { dof, max } => {
                write!(f, "dense assembly guard: dof {dof} exceeds {max}")
            }
        }
    }
}

/// P1 gradients on a triangle given vertex coordinates `(x1, x2)`.
pub(crate) fn p1_gradients(verts: [(f64, f64); 3]) -> [(f64, f64); 3] {
    let mut grads = [(0.0, 0.0); 3];
    for i in 0..3 {
        let a = verts[i];
        let b = verts[(i + 1) % 3];
        let c = verts[(i + 2) % 3];
        let d = (a.0 - b.0) * (c.1 - b.1) - (a.1 - b.1) * (c.0 - b.0);
        grads[i] = ((c.1 - b.1) / d, -(c.0 - b.0) / d);
    }
    grads
}

fn signed_area(verts: [(f64, f64); 3]) -> f64 {
    let [a, b, c] = verts;
    0.5 * ((b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0))
}

/// Stencil tables on the unit-mesh-size reference patch.
///
/// `op[k]` holds the constant `<grad phi_{i+d}, grad phi_i>` attained on the
/// `k`-th adjacent triangle for each window offset `d` (row-major 3x3, unit
/// `h`; scale by `1/h^2` for an actual level). `mass` holds `\int phi_{i+d}
/// phi_i` per offset for unit `h` (scale by `h^2`). Computed from the
/// triangle tables rather than hard-coded.
#[derive(Debug, Clone)]
pub struct StencilTables {
    op: [[f64; 9]; 6],
    mass: [f64; 9],
}

#[inline]
fn widx(dr: i32, dc: i32) -> usize {
    ((dr + 1) * 3 + (dc + 1)) as usize
}

impl StencilTables {
    pub fn compute() -> Self {
        let mut op = [[0.0f64; 9]; 6];
        let mut mass = [0.0f64; 9];
        for (k, tri) in TRI_VERTEX_OFFSETS.iter().enumerate() {
            // offsets are (dr, dc) = (dx2, dx1); geometry wants (x1, x2)
            let verts = [
                (tri[0].1 as f64, tri[0].0 as f64),
                (tri[1].1 as f64, tri[1].0 as f64),
                (tri[2].1 as f64, tri[2].0 as f64),
            ];
            let grads = p1_gradients(verts);
            let area = num::abs(signed_area(verts));
            for j in 0..3 {
                let (dr, dc) = tri[j];
                // the constant <grad phi_{i+d}, grad phi_i> attained on the
                // triangle; the area factor lives in the triangle integral
                let dot = grads[j].0 * grads[0].0 + grads[j].1 * grads[0].1;
                op[k][widx(dr, dc)] += dot;
                // P1 element mass: area/12 * (1 + delta_ij)
                let w = if j == 0 { 2.0 } else { 1.0 };
                mass[widx(dr, dc)] += w * area / 12.0;
            }
        }
        StencilTables { op, mass }
    }

    /// Nonzero operator entries of channel `k`, window row-major, unit `h`.
    pub fn op_entries(&self, k: usize) -> Vec<(i32, i32, f64)> {
        let mut out = Vec::new();
        for dr in -1i32..=1 {
            for dc in -1i32..=1 {
                let v = self.op[k][widx(dr, dc)];
                if v != 0.0 {
                    out.push((dr, dc, v));
                }
            }
        }
        out
    }

    pub fn op_table(&self, k: usize) -> &[f64; 9] {
        &self.op[k]
    }

    /// 9-point stiffness stencil for a constant-one coefficient (h-free).
    pub fn unit_stiffness(&self) -> [f64; 9] {
        let mut s = [0.0; 9];
        for k in 0..6 {
            // triangle integral of 1 is area = 1/2 in unit h
            for i in 0..9 {
                s[i] += 0.5 * self.op[k][i];
            }
        }
        s
    }

    pub fn mass_table(&self) -> &[f64; 9] {
        &self.mass
    }
}

/// Triangle vertex offsets of channel `k`, sorted window row-major. The
/// classical integration and the convolutional kernel iterate this order so
/// both produce identical floating-point sums.
pub(crate) fn kappa_offsets(k: usize) -> [(i32, i32); 3] {
    let mut offs = TRI_VERTEX_OFFSETS[k];
    offs.sort_unstable_by_key(|&(dr, dc)| (dr, dc));
    offs
}

/// Decomposition of each coarse adjacent triangle into four fine ones.
///
/// Entry `(dr, dc, fine_k)` means: fine channel `fine_k` at the fine vertex
/// displaced `(dr, dc)` from the coarse-aligned fine vertex. Derived from
/// the triangle tables by exact set matching; sorted row-major then by
/// channel, matching strided-convolution iteration order.
pub(crate) fn coarsen_entries() -> [[(i32, i32, usize); 4]; 6] {
    let mut table = [[(0i32, 0i32, 0usize); 4]; 6];
    for (k, tri) in TRI_VERTEX_OFFSETS.iter().enumerate() {
        let a = (2 * tri[0].0, 2 * tri[0].1);
        let b = (2 * tri[1].0, 2 * tri[1].1);
        let c = (2 * tri[2].0, 2 * tri[2].1);
        let mab = ((a.0 + b.0) / 2, (a.1 + b.1) / 2);
        let mac = ((a.0 + c.0) / 2, (a.1 + c.1) / 2);
        let mbc = ((b.0 + c.0) / 2, (b.1 + c.1) / 2);
        let subs = [
            [a, mab, mac],
            [b, mab, mbc],
            [c, mac, mbc],
            [mab, mbc, mac],
        ];
        let mut found: Vec<(i32, i32, usize)> = Vec::with_capacity(4);
        for sub in subs.iter() {
            let mut sorted_sub = *sub;
            sorted_sub.sort_unstable();
            let mut hit = None;
            'anchor: for &anchor in sub.iter() {
                if anchor.0.abs() > 1 || anchor.1.abs() > 1 {
                    continue;
                }
                for (fk, ftri) in TRI_VERTEX_OFFSETS.iter().enumerate() {
                    let mut cand = [
                        (anchor.0 + ftri[0].0, anchor.1 + ftri[0].1),
                        (anchor.0 + ftri[1].0, anchor.1 + ftri[1].1),
                        (anchor.0 + ftri[2].0, anchor.1 + ftri[2].1),
                    ];
                    cand.sort_unstable();
                    if cand == sorted_sub {
                        hit = Some((anchor.0, anchor.1, fk));
                        break 'anchor;
                    }
                }
            }
            found.push(hit.expect("every fine sub-triangle is adjacent to a nearby fine vertex"));
        }
        found.sort_unstable();
        for (slot, entry) in table[k].iter_mut().zip(found) {
            *slot = entry;
        }
    }
    table
}

/// Per-vertex integrals of the coefficient over the six adjacent triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleIntegrals {
    m: usize,
    h: f64,
    /// channel-major: `data[k * m * m + r * m + c]`
    data: Vec<f64>,
}

impl TriangleIntegrals {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn mesh_size(&self) -> f64 {
        self.h
    }

    pub fn dof(&self) -> usize {
        self.m * self.m
    }

    pub fn chan(&self, k: usize) -> &[f64] {
        let d = self.m * self.m;
        &self.data[k * d..(k + 1) * d]
    }

    #[inline]
    pub fn at(&self, k: usize, r: usize, c: usize) -> f64 {
        self.data[k * self.m * self.m + r * self.m + c]
    }

    pub(crate) fn from_raw(m: usize, h: f64, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), 6 * m * m);
        TriangleIntegrals { m, h, data }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(num::abs(v)))
    }
}

/// Exact integrals of the P1 interpolant of `kappa` over every adjacent
/// triangle: `(sum of the three vertex values) * area / 3` per triangle.
pub fn triangle_integrals(kappa: &ExtendedField, level: &GridLevel) -> Result<TriangleIntegrals, FeError> {
    let n = level.cells_per_side();
    if kappa.cells() != n {
        return Err(FeError::DimensionMismatch { expected: n, got: kappa.cells() });
    }
    let m = level.interior_per_side();
    let h = level.mesh_size();
    let w = h * h / 6.0; // area/3 per vertex value
    let mut data = Vec::with_capacity(6 * m * m);
    for k in 0..6 {
        let offs = kappa_offsets(k);
        for r in 0..m {
            for c in 0..m {
                // extended coordinates of the interior vertex
                let (er, ec) = (r + 1, c + 1);
                let mut acc = 0.0;
                for &(dr, dc) in offs.iter() {
                    let v = kappa.at((er as i32 + dr) as usize, (ec as i32 + dc) as usize);
                    acc += w * v;
                }
                data.push(acc);
            }
        }
    }
    Ok(TriangleIntegrals { m, h, data })
}

/// Exact re-integration on the next coarser level: every coarse adjacent
/// triangle is the union of four fine ones, so its integral is their sum.
pub fn coarsen_triangle_integrals(fine: &TriangleIntegrals) -> TriangleIntegrals {
    let mf = fine.m;
    debug_assert!(mf >= 3 && mf % 2 == 1);
    let mc = (mf - 1) / 2;
    let table = coarsen_entries();
    let mut data = Vec::with_capacity(6 * mc * mc);
    for k in 0..6 {
        let entries = &table[k];
        for rr in 0..mc {
            for cc in 0..mc {
                let (fr, fc) = (2 * rr + 1, 2 * cc + 1);
                let mut acc = 0.0;
                for &(dr, dc, fk) in entries.iter() {
                    acc += fine.at(fk, (fr as i32 + dr) as usize, (fc as i32 + dc) as usize);
                }
                data.push(acc);
            }
        }
    }
    TriangleIntegrals { m: mc, h: fine.h * 2.0, data }
}

/// Applies the diffusion operator: six stencil passes, each multiplied
/// pointwise by one integral channel, summed over channels.
pub fn apply_operator(ups: &TriangleIntegrals, u: &Field) -> Result<Field, FeError> {
    let mut out = Field::zeros(ups.m);
    apply_operator_into(ups, u, &mut out)?;
    Ok(out)
}

pub fn apply_operator_into(
    ups: &TriangleIntegrals,
    u: &Field,
    out: &mut Field,
) -> Result<(), FeError> {
    let m = ups.m;
    if u.m() != m || out.m() != m {
        return Err(FeError::DimensionMismatch { expected: m * m, got: u.len() });
    }
    let tables = StencilTables::compute();
    let inv_h2 = 1.0 / (ups.h * ups.h);
    // per-channel nonzero entry lists, window row-major, scaled to this
    // level; a channel has two or three nonzero couplings
    let entries: Vec<Vec<(i32, i32, f64)>> = (0..6)
        .map(|k| {
            tables
                .op_entries(k)
                .into_iter()
                .map(|(dr, dc, v)| (dr, dc, v * inv_h2))
                .collect()
        })
        .collect();
    let mi = m as i32;
    for r in 0..m {
        for c in 0..m {
            let mut acc = 0.0;
            for k in 0..6 {
                let mut s = 0.0;
                for &(dr, dc, w) in entries[k].iter() {
                    let rr = r as i32 + dr;
                    let cc = c as i32 + dc;
                    if rr >= 0 && rr < mi && cc >= 0 && cc < mi {
                        s += w * u.at(rr as usize, cc as usize);
                    }
                }
                acc += ups.at(k, r, c) * s;
            }
            out.set(r, c, acc);
        }
    }
    Ok(())
}

/// Element-loop assembly of the stiffness matrix; the independent oracle for
/// the stencil path. Gradients come from vertex coordinates, integrals from
/// the extended nodal coefficient.
pub fn assemble_dense(kappa: &ExtendedField, level: &GridLevel) -> Result<DenseMatrix, FeError> {
    let dof = level.dof();
    if dof > DENSE_GUARD {
        return Err(FeError::SizeGuardExceeded { dof, max: DENSE_GUARD });
    }
    let mut a = DenseMatrix::zeros(dof);
    assemble_dense_into(kappa, level, &mut a)?;
    Ok(a)
}

pub fn assemble_dense_into(
    kappa: &ExtendedField,
    level: &GridLevel,
    a: &mut DenseMatrix,
) -> Result<(), FeError> {
    let n = level.cells_per_side();
    if kappa.cells() != n {
        return Err(FeError::DimensionMismatch { expected: n, got: kappa.cells() });
    }
    let dof = level.dof();
    if a.n() != dof {
        return Err(FeError::DimensionMismatch { expected: dof, got: a.n() });
    }
    a.fill_zero();
    let m = level.interior_per_side();
    for_each_element(level, |tri| {
        let grads = p1_gradients(tri.coords);
        let kap_int = tri.kappa_integral(kappa);
        for i in 0..3 {
            let Some(gi) = tri.dof_index(i, m) else { continue };
            for j in 0..3 {
                let Some(gj) = tri.dof_index(j, m) else { continue };
                let dot = grads[i].0 * grads[j].0 + grads[i].1 * grads[j].1;
                a.add(gi, gj, kap_int * dot);
            }
        }
    });
    Ok(())
}

/// One mesh triangle during an element loop.
struct Element {
    /// vertex grid indices `(x1_idx, x2_idx)`
    verts: [(usize, usize); 3],
    coords: [(f64, f64); 3],
}

impl Element {
    fn dof_index(&self, i: usize, m: usize) -> Option<usize> {
        let (x1, x2) = self.verts[i];
        if x1 >= 1 && x1 <= m && x2 >= 1 && x2 <= m {
            Some((x2 - 1) * m + (x1 - 1))
        } else {
            None
        }
    }

    /// Exact integral of the P1 interpolant over the element.
    fn kappa_integral(&self, kappa: &ExtendedField) -> f64 {
        let area = num::abs(signed_area(self.coords));
        let sum: f64 = self
            .verts
            .iter()
            .map(|&(x1, x2)| kappa.at(x2, x1))
            .sum();
        sum * area / 3.0
    }
}

fn for_each_element(level: &GridLevel, mut f: impl FnMut(&Element)) {
    let n = level.cells_per_side();
    for b in 0..n {
        for a in 0..n {
            // cell [a, a+1] x [b, b+1]; diagonal from (a, b) to (a+1, b+1)
            let lower = [(a, b), (a + 1, b), (a + 1, b + 1)];
            let upper = [(a, b), (a + 1, b + 1), (a, b + 1)];
            for verts in [lower, upper] {
                let coords = [
                    (level.coord(verts[0].0), level.coord(verts[0].1)),
                    (level.coord(verts[1].0), level.coord(verts[1].1)),
                    (level.coord(verts[2].0), level.coord(verts[2].1)),
                ];
                f(&Element { verts, coords });
            }
        }
    }
}

/// Stiffness matrix in banded storage, assembled from the triangle-integral
/// stencil so direct coarse solves act on exactly the operator the smoother
/// applies.
pub fn assemble_banded_from_integrals(ups: &TriangleIntegrals) -> BandedSpd {
    let m = ups.m;
    let dof = m * m;
    let bw = m + 1;
    let tables = StencilTables::compute();
    let inv_h2 = 1.0 / (ups.h * ups.h);
    let mut band = BandedSpd::zeros(dof, bw);
    let mi = m as i32;
    for r in 0..m {
        for c in 0..m {
            let i = r * m + c;
            for k in 0..6 {
                for (dr, dc, v) in tables.op_entries(k) {
                    let rr = r as i32 + dr;
                    let cc = c as i32 + dc;
                    if rr >= 0 && rr < mi && cc >= 0 && cc < mi {
                        let j = rr as usize * m + cc as usize;
                        band.add_lower(i, j, ups.at(k, r, c) * v * inv_h2);
                    }
                }
            }
        }
    }
    band
}

/// Dense materialisation of the stencil operator (test/verification helper).
pub fn assemble_dense_from_integrals(ups: &TriangleIntegrals) -> Result<DenseMatrix, FeError> {
    let m = ups.m;
    let dof = m * m;
    if dof > DENSE_GUARD {
        return Err(FeError::SizeGuardExceeded { dof, max: DENSE_GUARD });
    }
    let tables = StencilTables::compute();
    let inv_h2 = 1.0 / (ups.h * ups.h);
    let mut a = DenseMatrix::zeros(dof);
    let mi = m as i32;
    for r in 0..m {
        for c in 0..m {
            let i = r * m + c;
            for k in 0..6 {
                for (dr, dc, v) in tables.op_entries(k) {
                    let rr = r as i32 + dr;
                    let cc = c as i32 + dc;
                    if rr >= 0 && rr < mi && cc >= 0 && cc < mi {
                        a.add(i, rr as usize * m + cc as usize, ups.at(k, r, c) * v * inv_h2);
                    }
                }
            }
        }
    }
    Ok(a)
}

/// Load vector for a constant right-hand side: every interior hat integrates
/// to `h^2`.
pub fn rhs_vector(level: &GridLevel, f_const: f64) -> Field {
    let h = level.mesh_size();
    Field::constant(level.interior_per_side(), f_const * h * h)
}

/// H1 mass matrix (L2 mass plus unit-coefficient stiffness), element loop.
pub fn h1_mass_matrix(level: &GridLevel) -> CsrMatrix {
    let m = level.interior_per_side();
    let dof = m * m;
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(9 * dof);
    for_each_element(level, |tri| {
        let grads = p1_gradients(tri.coords);
        let area = num::abs(signed_area(tri.coords));
        for i in 0..3 {
            let Some(gi) = tri.dof_index(i, m) else { continue };
            for j in 0..3 {
                let Some(gj) = tri.dof_index(j, m) else { continue };
                let stiff = (grads[i].0 * grads[j].0 + grads[i].1 * grads[j].1) * area;
                let mass = area / 12.0 * if i == j { 2.0 } else { 1.0 };
                triplets.push((gi, gj, stiff + mass));
            }
        }
    });
    CsrMatrix::from_triplets(dof, dof, &mut triplets)
}

fn stencil_apply(u: &Field, table: &[f64; 9]) -> Field {
    let m = u.m();
    let mi = m as i32;
    Field::from_fn(m, |r, c| {
        let mut acc = 0.0;
        for dr in -1i32..=1 {
            for dc in -1i32..=1 {
                let w = table[widx(dr, dc)];
                if w == 0.0 {
                    continue;
                }
                let rr = r as i32 + dr;
                let cc = c as i32 + dc;
                if rr >= 0 && rr < mi && cc >= 0 && cc < mi {
                    acc += w * u.at(rr as usize, cc as usize);
                }
            }
        }
        acc
    })
}

fn h1_table(level: &GridLevel) -> [f64; 9] {
    let tables = StencilTables::compute();
    let h2 = level.mesh_size() * level.mesh_size();
    let stiff = tables.unit_stiffness();
    let mass = tables.mass_table();
    let mut t = [0.0; 9];
    for i in 0..9 {
        t[i] = stiff[i] + h2 * mass[i];
    }
    t
}

/// `u^T M v` in the H1 inner product, via the combined 9-point stencil.
pub fn h1_inner(u: &Field, v: &Field, level: &GridLevel) -> Result<f64, FeError> {
    let m = level.interior_per_side();
    if u.m() != m || v.m() != m {
        return Err(FeError::DimensionMismatch { expected: m * m, got: u.len() });
    }
    let mv = stencil_apply(v, &h1_table(level));
    Ok(crate::linalg::dot(u.as_slice(), mv.as_slice()))
}

pub fn h1_norm(u: &Field, level: &GridLevel) -> Result<f64, FeError> {
    Ok(num::sqrt(h1_inner(u, u, level)?.max(0.0)))
}

/// `u^T M v` in the L2 inner product.
pub fn l2_inner(u: &Field, v: &Field, level: &GridLevel) -> Result<f64, FeError> {
    let m = level.interior_per_side();
    if u.m() != m || v.m() != m {
        return Err(FeError::DimensionMismatch { expected: m * m, got: u.len() });
    }
    let h2 = level.mesh_size() * level.mesh_size();
    let tables = StencilTables::compute();
    let mut t = [0.0; 9];
    for (ti, mi) in t.iter_mut().zip(tables.mass_table()) {
        *ti = mi * h2;
    }
    let mv = stencil_apply(v, &t);
    Ok(crate::linalg::dot(u.as_slice(), mv.as_slice()))
}

pub fn l2_norm(u: &Field, level: &GridLevel) -> Result<f64, FeError> {
    Ok(num::sqrt(l2_inner(u, u, level)?.max(0.0)))
}

/// Pointwise evaluation of the FE function of a coefficient vector
/// (boundary coefficients zero). Points outside `[0,1]^2` evaluate to 0.
pub fn eval_p1(u: &Field, level: &GridLevel, x1: f64, x2: f64) -> f64 {
    eval_p1_impl(level, x1, x2, |i1, i2| {
        let m = u.m();
        if i1 >= 1 && i1 <= m && i2 >= 1 && i2 <= m {
            u.at(i2 - 1, i1 - 1)
        } else {
            0.0
        }
    })
}

/// Pointwise evaluation of the P1 interpolant of an extended nodal field.
pub fn eval_p1_extended(kappa: &ExtendedField, level: &GridLevel, x1: f64, x2: f64) -> f64 {
    eval_p1_impl(level, x1, x2, |i1, i2| kappa.at(i2, i1))
}

fn eval_p1_impl(
    level: &GridLevel,
    x1: f64,
    x2: f64,
    value: impl Fn(usize, usize) -> f64,
) -> f64 {
    if !(0.0..=1.0).contains(&x1) || !(0.0..=1.0).contains(&x2) {
        return 0.0;
    }
    let n = level.cells_per_side();
    let nf = n as f64;
    let a = ((x1 * nf) as usize).min(n - 1);
    let b = ((x2 * nf) as usize).min(n - 1);
    let xi = x1 * nf - a as f64;
    let eta = x2 * nf - b as f64;
    let v00 = value(a, b);
    let v10 = value(a + 1, b);
    let v01 = value(a, b + 1);
    let v11 = value(a + 1, b + 1);
    // diagonal of each cell runs lower-left to upper-right
    if xi >= eta {
        v00 + (v10 - v00) * xi + (v11 - v10) * eta
    } else {
        v00 + (v11 - v01) * xi + (v01 - v00) * eta
    }
}

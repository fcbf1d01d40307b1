//! Convolutional realisation of the multigrid building blocks.
//!
//! Every linear action of the solver -- operator application, coefficient
//! integration, integral coarsening, restriction, prolongation -- is carried
//! by a small convolution kernel constructed here and verified against its
//! matrix oracle on construction. The conv V-cycle then runs the exact same
//! arithmetic as the classical path, so results agree elementwise, not just
//! up to discretisation error.
//!
//! Conventions: kernels are 3x3, convolutions are zero-padded
//! cross-correlations, and summation always walks the window row-major and
//! then input channels, matching the stencil loops in [`crate::fe`].
//! Strided (factor 2) convolutions read the fine grid at odd indices, which
//! maps an interior-vertex grid of side `2w + 1` to side `w`; the
//! transpose-strided convolution inverts that. With this convention the
//! strided pair realises exactly the nested-space embedding and its adjoint.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::fe::{
    self, coarsen_entries, kappa_offsets, triangle_integrals, StencilTables, TriangleIntegrals,
};
use crate::grid::{ExtendedField, Field, GridHierarchy, PROLONG_WEIGHTS};
use crate::multigrid::{
    mg_solve_with_stack, v_cycle_ops, MgError, MgOps, MgRun, OperatorStack, VCycleConfig,
};
use crate::num;
use crate::rng::SampleRng;

#[derive(Debug, Clone, PartialEq)]
pub enum ConvError {
    ShapeMismatch { what: &'static str },
    KernelVerification { check: &'static str, deviation: f64 },
    DirectCoarseUnsupported,
    InputBound { max_abs: f64, bound: f64 },
    MulUnitUnreachable { requested: f64, best: f64 },
    Mg(MgError),
}

impl fmt::Display for ConvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConvError::ShapeMismatch { what } => write!(f, "shape mismatch: {what}"),
            ConvError::KernelVerification { check, deviation } => {
                write!(f, "kernel verification failed: {check} deviates by {deviation:e}")
            }
            ConvError::DirectCoarseUnsupported => {
                write!(f, "conv path has no direct solver; use Richardson coarse mode")
            }
            ConvError::InputBound { max_abs, bound } => {
                write!(f, "input magnitude {max_abs} exceeds the unit's bound {bound}")
            }
            ConvError::MulUnitUnreachable { requested, best } => {
                write!(f, "multiplication tolerance {requested:e} unreachable; best {best:e}")
            }
            ConvError::Mg(e) => write!(f, "{e}"),
        }
    }
}

impl From<MgError> for ConvError {
    fn from(e: MgError) -> Self {
        ConvError::Mg(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrideMode {
    /// Zero-padded, spatial size preserved.
    Vanilla,
    /// Stride-2 windows centred at odd indices: side `2w+1 -> w`.
    TwoStrided,
    /// Transpose of the above: side `w -> 2w+1`.
    TwoTransposeStrided,
}

/// A 3x3 convolution kernel with `c_in` input and `c_out` output channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    c_in: usize,
    c_out: usize,
    mode: StrideMode,
    /// `weights[(ci * c_out + co) * 9 + (dr+1)*3 + (dc+1)]`
    weights: Vec<f64>,
    bias: Option<Vec<f64>>,
}

impl ConvKernel {
    pub fn zeros(c_in: usize, c_out: usize, mode: StrideMode) -> Self {
        ConvKernel { c_in, c_out, mode, weights: vec![0.0; c_in * c_out * 9], bias: None }
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn mode(&self) -> StrideMode {
        self.mode
    }

    #[inline]
    fn slot(&self, ci: usize, co: usize, dr: i32, dc: i32) -> usize {
        (ci * self.c_out + co) * 9 + ((dr + 1) * 3 + (dc + 1)) as usize
    }

    pub fn set(&mut self, ci: usize, co: usize, dr: i32, dc: i32, v: f64) {
        let s = self.slot(ci, co, dr, dc);
        self.weights[s] = v;
    }

    #[inline]
    pub fn get(&self, ci: usize, co: usize, dr: i32, dc: i32) -> f64 {
        self.weights[self.slot(ci, co, dr, dc)]
    }

    /// Instantiated parameter slots: every kernel entry plus any biases.
    pub fn weight_slots(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, |b| b.len())
    }
}

/// Borrowed multi-channel square input.
#[derive(Clone, Copy)]
pub struct TensorView<'a> {
    pub channels: usize,
    pub m: usize,
    pub data: &'a [f64],
}

impl<'a> TensorView<'a> {
    pub fn from_field(f: &'a Field) -> Self {
        TensorView { channels: 1, m: f.m(), data: f.as_slice() }
    }

    pub fn from_integrals(u: &'a TriangleIntegrals) -> Self {
        TensorView { channels: 6, m: u.m(), data: u.as_slice() }
    }

    pub fn from_extended(e: &'a ExtendedField) -> Self {
        TensorView { channels: 1, m: e.cells() + 1, data: e.as_slice() }
    }

    #[inline]
    fn at(&self, ch: usize, r: usize, c: usize) -> f64 {
        self.data[(ch * self.m + r) * self.m + c]
    }
}

/// Owned multi-channel square output.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub m: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    #[inline]
    pub fn at(&self, ch: usize, r: usize, c: usize) -> f64 {
        self.data[(ch * self.m + r) * self.m + c]
    }

    pub fn into_field(self) -> Result<Field, ConvError> {
        if self.channels != 1 {
            return Err(ConvError::ShapeMismatch { what: "expected a single channel" });
        }
        Field::from_vec(self.m, self.data)
            .map_err(|_| ConvError::ShapeMismatch { what: "tensor data length" })
    }
}

/// Zero-padded cross-correlation in the requested stride mode.
pub fn conv2d(input: TensorView<'_>, kernel: &ConvKernel) -> Result<Tensor, ConvError> {
    if input.channels != kernel.c_in {
        return Err(ConvError::ShapeMismatch { what: "input channels vs kernel" });
    }
    if input.data.len() != input.channels * input.m * input.m {
        return Err(ConvError::ShapeMismatch { what: "input data length" });
    }
    let m_in = input.m as i32;
    let m_out = match kernel.mode {
        StrideMode::Vanilla => input.m,
        StrideMode::TwoStrided => {
            if input.m < 3 || input.m % 2 == 0 {
                return Err(ConvError::ShapeMismatch { what: "strided input must have odd side >= 3" });
            }
            (input.m - 1) / 2
        }
        StrideMode::TwoTransposeStrided => 2 * input.m + 1,
    };
    let mut out = Tensor {
        channels: kernel.c_out,
        m: m_out,
        data: vec![0.0; kernel.c_out * m_out * m_out],
    };
    for co in 0..kernel.c_out {
        let bias = kernel.bias.as_ref().map_or(0.0, |b| b[co]);
        for r in 0..m_out {
            for c in 0..m_out {
                let mut acc = bias;
                match kernel.mode {
                    StrideMode::Vanilla => {
                        for dr in -1i32..=1 {
                            for dc in -1i32..=1 {
                                let rr = r as i32 + dr;
                                let cc = c as i32 + dc;
                                if rr < 0 || cc < 0 || rr >= m_in || cc >= m_in {
                                    continue;
                                }
                                for ci in 0..kernel.c_in {
                                    let w = kernel.get(ci, co, dr, dc);
                                    if w != 0.0 {
                                        acc += w * input.at(ci, rr as usize, cc as usize);
                                    }
                                }
                            }
                        }
                    }
                    StrideMode::TwoStrided => {
                        let (fr, fc) = (2 * r as i32 + 1, 2 * c as i32 + 1);
                        for dr in -1i32..=1 {
                            for dc in -1i32..=1 {
                                let rr = fr + dr;
                                let cc = fc + dc;
                                debug_assert!(rr >= 0 && rr < m_in && cc >= 0 && cc < m_in);
                                for ci in 0..kernel.c_in {
                                    let w = kernel.get(ci, co, dr, dc);
                                    if w != 0.0 {
                                        acc += w * input.at(ci, rr as usize, cc as usize);
                                    }
                                }
                            }
                        }
                    }
                    StrideMode::TwoTransposeStrided => {
                        for dr in -1i32..=1 {
                            for dc in -1i32..=1 {
                                // source index along each axis must be an odd
                                // in-range coordinate 2a+1
                                let ar = r as i32 - dr;
                                let ac = c as i32 - dc;
                                if ar < 1 || ac < 1 || ar % 2 == 0 || ac % 2 == 0 {
                                    continue;
                                }
                                let pr = (ar as usize - 1) / 2;
                                let pc = (ac as usize - 1) / 2;
                                if pr >= input.m || pc >= input.m {
                                    continue;
                                }
                                for ci in 0..kernel.c_in {
                                    let w = kernel.get(ci, co, dr, dc);
                                    if w != 0.0 {
                                        acc += w * input.at(ci, pr, pc);
                                    }
                                }
                            }
                        }
                    }
                }
                out.data[(co * m_out + r) * m_out + c] = acc;
            }
        }
    }
    Ok(out)
}

/// The constructed kernels for one hierarchy.
pub struct KernelSet {
    level_ms: Vec<usize>,
    /// per level: six 1->1 operator kernels carrying the gradient constants
    /// scaled by `1/h^2`
    op: Vec<[ConvKernel; 6]>,
    /// per level: 1->6 kernel turning an extended nodal coefficient into the
    /// six triangle-integral channels (weights `h^2/6`)
    kappa: Vec<ConvKernel>,
    /// 6->6 strided kernel summing the four fine sub-triangle integrals of
    /// each coarse adjacent triangle (weights 1)
    coarsen: ConvKernel,
    restrict: ConvKernel,
    prolong: ConvKernel,
}

impl KernelSet {
    pub fn level_count(&self) -> usize {
        self.level_ms.len()
    }

    pub fn op_kernels(&self, level: usize) -> &[ConvKernel; 6] {
        &self.op[level - 1]
    }

    /// Fault-injection hook for verification tooling: mutable access to one
    /// operator kernel.
    pub fn op_kernel_mut(&mut self, level: usize, k: usize) -> &mut ConvKernel {
        &mut self.op[level - 1][k]
    }

    pub fn kappa_kernel(&self, level: usize) -> &ConvKernel {
        &self.kappa[level - 1]
    }

    pub fn coarsen_kernel(&self) -> &ConvKernel {
        &self.coarsen
    }

    pub fn restrict_kernel(&self) -> &ConvKernel {
        &self.restrict
    }

    pub fn prolong_kernel(&self) -> &ConvKernel {
        &self.prolong
    }

    pub fn level_for_m(&self, m: usize) -> Option<usize> {
        self.level_ms.iter().position(|&lm| lm == m).map(|i| i + 1)
    }
}

/// Constructs all kernels for `hier` and verifies each against its matrix
/// oracle; any deviation beyond 1e-12 aborts with the failing check named.
pub fn build_kernel_set(hier: &GridHierarchy) -> Result<KernelSet, ConvError> {
    let tables = StencilTables::compute();
    let level_count = hier.level_count();
    let mut op = Vec::with_capacity(level_count);
    let mut kappa = Vec::with_capacity(level_count);
    let mut level_ms = Vec::with_capacity(level_count);
    for l in 1..=level_count {
        let level = hier.level(l).expect("level in range");
        let h = level.mesh_size();
        let inv_h2 = 1.0 / (h * h);
        let mut six: Vec<ConvKernel> = Vec::with_capacity(6);
        for k in 0..6 {
            let mut kern = ConvKernel::zeros(1, 1, StrideMode::Vanilla);
            for (dr, dc, v) in tables.op_entries(k) {
                kern.set(0, 0, dr, dc, v * inv_h2);
            }
            six.push(kern);
        }
        let six: [ConvKernel; 6] = six.try_into().expect("six kernels");
        op.push(six);

        let w = h * h / 6.0;
        let mut kk = ConvKernel::zeros(1, 6, StrideMode::Vanilla);
        for k in 0..6 {
            for (dr, dc) in kappa_offsets(k) {
                kk.set(0, k, dr, dc, w);
            }
        }
        kappa.push(kk);
        level_ms.push(level.interior_per_side());
    }

    let mut coarsen = ConvKernel::zeros(6, 6, StrideMode::TwoStrided);
    for (k_out, entries) in coarsen_entries().iter().enumerate() {
        for &(dr, dc, k_in) in entries.iter() {
            coarsen.set(k_in, k_out, dr, dc, 1.0);
        }
    }

    let mut restrict = ConvKernel::zeros(1, 1, StrideMode::TwoStrided);
    let mut prolong = ConvKernel::zeros(1, 1, StrideMode::TwoTransposeStrided);
    for dr in -1i32..=1 {
        for dc in -1i32..=1 {
            let w = PROLONG_WEIGHTS[(dr + 1) as usize][(dc + 1) as usize];
            restrict.set(0, 0, dr, dc, w);
            prolong.set(0, 0, dr, dc, w);
        }
    }

    let set = KernelSet { level_ms, op, kappa, coarsen, restrict, prolong };
    verify_kernel_set(&set, hier)?;
    Ok(set)
}

/// Construction-time checks against the matrix oracles.
fn verify_kernel_set(set: &KernelSet, hier: &GridHierarchy) -> Result<(), ConvError> {
    let tol = 1e-12;
    let mut rng = SampleRng::new(0x6b65_726e_656c_7631, 0);

    // integration kernel: constant coefficient -> triangle areas
    let l1 = hier.level(1).expect("level 1");
    let ones = ExtendedField::constant(l1.cells_per_side(), 1.0);
    let ups_conv = conv_triangle_integrals(&ones, 1, set)?;
    let expect = l1.mesh_size() * l1.mesh_size() / 2.0;
    for k in 0..6 {
        for &v in ups_conv.chan(k) {
            let d = num::abs(v - expect);
            if d > tol {
                return Err(ConvError::KernelVerification { check: "kappa integration", deviation: d });
            }
        }
    }

    // operator kernels vs dense element-loop assembly on the coarsest level
    let kappa = ExtendedField::from_fn(l1.cells_per_side(), |_, _| 0.5 + rng.uniform());
    let ups = triangle_integrals(&kappa, l1).map_err(MgError::Fe)?;
    let dense = fe::assemble_dense(&kappa, l1).map_err(MgError::Fe)?;
    let u = Field::from_fn(l1.interior_per_side(), |_, _| rng.uniform_pm1());
    let via_conv = conv_apply_operator(&ups, &u, 1, set)?;
    let via_dense = dense.matvec(u.as_slice());
    let scale = via_dense.iter().fold(1e-30f64, |m, &v| m.max(num::abs(v)));
    for (a, b) in via_conv.as_slice().iter().zip(&via_dense) {
        let d = num::abs(a - b) / scale;
        if d > tol {
            return Err(ConvError::KernelVerification { check: "operator application", deviation: d });
        }
    }

    if hier.level_count() >= 2 {
        // prolongation/restriction vs the embedding matrix
        let p = hier.prolongation_matrix(1).map_err(MgError::Grid)?;
        let mc = hier.level(1).expect("level").interior_per_side();
        let mf = hier.level(2).expect("level").interior_per_side();
        let c = Field::from_fn(mc, |_, _| rng.uniform_pm1());
        let fine_conv = conv_prolong(&c, set)?;
        let fine_mat = p.matvec(c.as_slice()).map_err(MgError::Linalg)?;
        for (a, b) in fine_conv.as_slice().iter().zip(&fine_mat) {
            let d = num::abs(a - b);
            if d > tol {
                return Err(ConvError::KernelVerification { check: "prolongation", deviation: d });
            }
        }
        let r = Field::from_fn(mf, |_, _| rng.uniform_pm1());
        let coarse_conv = conv_restrict(&r, set)?;
        let coarse_mat = p.matvec_transpose(r.as_slice()).map_err(MgError::Linalg)?;
        for (a, b) in coarse_conv.as_slice().iter().zip(&coarse_mat) {
            let d = num::abs(a - b);
            if d > tol {
                return Err(ConvError::KernelVerification { check: "restriction", deviation: d });
            }
        }

        // integral coarsening vs exact re-integration
        let l2 = hier.level(2).expect("level 2");
        let kappa2 = ExtendedField::from_fn(l2.cells_per_side(), |_, _| 0.5 + rng.uniform());
        let fine_ups = triangle_integrals(&kappa2, l2).map_err(MgError::Fe)?;
        let coarse_exact = fe::coarsen_triangle_integrals(&fine_ups);
        let coarse_conv = conv_coarsen_integrals(&fine_ups, set)?;
        for (a, b) in coarse_conv.as_slice().iter().zip(coarse_exact.as_slice()) {
            let d = num::abs(a - b);
            if d > tol {
                return Err(ConvError::KernelVerification { check: "integral coarsening", deviation: d });
            }
        }
    }
    Ok(())
}

/// Triangle integrals through the 1->6 kernel: vanilla convolution over the
/// extended grid, cropped to interior vertices. Zero padding never reaches
/// an interior output, so the crop is exact.
pub fn conv_triangle_integrals(
    kappa: &ExtendedField,
    level: usize,
    set: &KernelSet,
) -> Result<TriangleIntegrals, ConvError> {
    let m = set.level_ms[level - 1];
    if kappa.cells() != m + 1 {
        return Err(ConvError::ShapeMismatch { what: "extended field vs level" });
    }
    let full = conv2d(TensorView::from_extended(kappa), set.kappa_kernel(level))?;
    let mut data = Vec::with_capacity(6 * m * m);
    for k in 0..6 {
        for r in 0..m {
            for c in 0..m {
                data.push(full.at(k, r + 1, c + 1));
            }
        }
    }
    let h = 1.0 / (m as f64 + 1.0);
    Ok(TriangleIntegrals::from_raw(m, h, data))
}

/// Operator application through the six kernels: `sum_k ups_k .* (u * K_k)`.
pub fn conv_apply_operator(
    ups: &TriangleIntegrals,
    u: &Field,
    level: usize,
    set: &KernelSet,
) -> Result<Field, ConvError> {
    let m = ups.m();
    if u.m() != m || set.level_ms.get(level - 1) != Some(&m) {
        return Err(ConvError::ShapeMismatch { what: "operator input vs level" });
    }
    let mut out = Field::zeros(m);
    for k in 0..6 {
        let pass = conv2d(TensorView::from_field(u), &set.op_kernels(level)[k])?;
        let chan = ups.chan(k);
        let o = out.as_mut_slice();
        for i in 0..o.len() {
            o[i] += chan[i] * pass.data[i];
        }
    }
    Ok(out)
}

pub fn conv_restrict(fine: &Field, set: &KernelSet) -> Result<Field, ConvError> {
    conv2d(TensorView::from_field(fine), &set.restrict)?.into_field()
}

pub fn conv_prolong(coarse: &Field, set: &KernelSet) -> Result<Field, ConvError> {
    conv2d(TensorView::from_field(coarse), &set.prolong)?.into_field()
}

pub fn conv_coarsen_integrals(
    fine: &TriangleIntegrals,
    set: &KernelSet,
) -> Result<TriangleIntegrals, ConvError> {
    let out = conv2d(TensorView::from_integrals(fine), &set.coarsen)?;
    Ok(TriangleIntegrals::from_raw(out.m, fine.mesh_size() * 2.0, out.data))
}

/// The solver actions routed through convolutions.
pub struct ConvOps<'a> {
    set: &'a KernelSet,
}

impl<'a> ConvOps<'a> {
    pub fn new(set: &'a KernelSet) -> Self {
        ConvOps { set }
    }
}

impl MgOps for ConvOps<'_> {
    fn apply(&self, level: usize, ups: &TriangleIntegrals, u: &Field) -> Field {
        conv_apply_operator(ups, u, level, self.set).expect("stack dimensions consistent")
    }

    fn restrict(&self, fine: &Field) -> Field {
        conv_restrict(fine, self.set).expect("stack dimensions consistent")
    }

    fn prolong(&self, coarse: &Field) -> Field {
        conv_prolong(coarse, self.set).expect("stack dimensions consistent")
    }
}

/// Builds the operator stack with every step done by convolution: integrate
/// on the finest level, then coarsen the channels level by level.
pub fn conv_build_stack(
    kappa: &ExtendedField,
    hier: &GridHierarchy,
    cfg: &VCycleConfig,
    set: &KernelSet,
) -> Result<OperatorStack, ConvError> {
    if !matches!(cfg.coarse, crate::multigrid::CoarseSolve::Richardson(_)) {
        return Err(ConvError::DirectCoarseUnsupported);
    }
    let lcount = hier.level_count();
    let mut chain = Vec::with_capacity(lcount);
    chain.push(conv_triangle_integrals(kappa, lcount, set)?);
    for _ in 1..lcount {
        let next = conv_coarsen_integrals(chain.last().unwrap(), set)?;
        chain.push(next);
    }
    chain.reverse();
    let stack = OperatorStack::from_integral_chain(chain, cfg, |ups, u| {
        let level = set.level_for_m(ups.m()).expect("chain levels match the kernel set");
        conv_apply_operator(ups, u, level, set).expect("chain dimensions consistent")
    })?;
    Ok(stack)
}

/// One V-cycle with convolutional operations.
pub fn conv_v_cycle(
    u: &Field,
    f: &Field,
    stack: &OperatorStack,
    cfg: &VCycleConfig,
    l: usize,
    set: &KernelSet,
) -> Result<Field, ConvError> {
    if !matches!(cfg.coarse, crate::multigrid::CoarseSolve::Richardson(_)) {
        return Err(ConvError::DirectCoarseUnsupported);
    }
    Ok(v_cycle_ops(&ConvOps::new(set), u, f, stack, cfg, l)?)
}

/// Iterated conv-path multigrid solve; mirrors `multigrid::mg_solve` with
/// Richardson coarse mode, operation for operation.
pub fn conv_mg_solve(
    u0: &Field,
    kappa: &ExtendedField,
    f: &Field,
    cfg: &VCycleConfig,
    hier: &GridHierarchy,
    set: &KernelSet,
) -> Result<MgRun, ConvError> {
    let stack = conv_build_stack(kappa, hier, cfg, set)?;
    Ok(mg_solve_with_stack(&ConvOps::new(set), u0, f, &stack, cfg)?)
}

/// Activations admissible for the multiplication unit: smooth near the
/// expansion point with nonvanishing second derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Softplus,
    Exp,
}

impl Activation {
    pub fn rho(&self, x: f64) -> f64 {
        match self {
            // numerically stable softplus
            Activation::Softplus => {
                if x > 30.0 {
                    x
                } else if x < -30.0 {
                    num::exp(x)
                } else {
                    num::ln(1.0 + num::exp(x))
                }
            }
            Activation::Exp => num::exp(x),
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match self {
            Activation::Softplus => {
                let s = 1.0 / (1.0 + num::exp(-x));
                s * (1.0 - s)
            }
            Activation::Exp => num::exp(x),
        }
    }
}

/// Two-layer, at most nine-weight network approximating pointwise
/// multiplication on `[-bound, bound]^2` via the second-order mixed
/// difference of the activation.
///
/// Parameter accounting (the canonical construction): the first layer is a
/// 2->3 channel 1x1 convolution (6 kernel slots) with one shared bias `x0`;
/// the second layer combines the three channels with signs `(+, -, -)` times
/// one scale `1/(lambda^2 rho''(x0))` and one output bias `rho(x0)` times
/// that scale. Total: 6 + 1 + 1 + 1 = 9.
#[derive(Debug, Clone)]
pub struct MulUnit {
    pub activation: Activation,
    pub x0: f64,
    pub lambda: f64,
    pub bound: f64,
    pub epsilon: f64,
    /// Sup error measured on the 401x401 calibration grid.
    pub achieved: f64,
    pub weight_count: usize,
    pub layers: usize,
}

pub const MUL_UNIT_WEIGHTS: usize = 9;
const MUL_GRID: usize = 401;

impl MulUnit {
    /// Network forward pass for scalars.
    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let rho = |t: f64| self.activation.rho(t);
        let scale = 1.0 / (self.lambda * self.lambda * self.activation.second_derivative(self.x0));
        // layer 1: three channels through the activation
        let c1 = rho(self.x0 + self.lambda * x + self.lambda * y);
        let c2 = rho(self.x0 + self.lambda * x);
        let c3 = rho(self.x0 + self.lambda * y);
        // layer 2: signed combination plus output bias
        let bias = rho(self.x0) * scale;
        bias + scale * c1 - scale * c2 - scale * c3
    }
}

fn mul_unit_sup_error(activation: Activation, x0: f64, lambda: f64, bound: f64) -> f64 {
    let unit = MulUnit {
        activation,
        x0,
        lambda,
        bound,
        epsilon: 0.0,
        achieved: 0.0,
        weight_count: MUL_UNIT_WEIGHTS,
        layers: 2,
    };
    let step = 2.0 * bound / (MUL_GRID - 1) as f64;
    let mut sup = 0.0f64;
    for i in 0..MUL_GRID {
        let x = -bound + i as f64 * step;
        for j in 0..MUL_GRID {
            let y = -bound + j as f64 * step;
            let d = num::abs(unit.eval(x, y) - x * y);
            if d > sup {
                sup = d;
            }
        }
    }
    sup
}

/// Builds the unit with the softplus activation expanded at 0.
pub fn build_mul_unit(bound: f64, epsilon: f64) -> Result<MulUnit, ConvError> {
    build_mul_unit_with(Activation::Softplus, 0.0, bound, epsilon)
}

/// Chooses `lambda` by bisection so the measured sup error on the
/// calibration grid lands at (just below) `epsilon`. Fails with the best
/// achieved error when `epsilon` is below the floating-point floor.
pub fn build_mul_unit_with(
    activation: Activation,
    x0: f64,
    bound: f64,
    epsilon: f64,
) -> Result<MulUnit, ConvError> {
    debug_assert!(bound > 0.0 && epsilon > 0.0 && epsilon < 0.5);
    // The grid error is U-shaped in lambda: the Taylor remainder shrinks
    // like lambda^2 while floating-point cancellation grows like
    // 1/lambda^2. Walk down from the smooth-region cap until the target is
    // met (or the floor is passed), then bisect back toward the target so
    // the achieved error sits just below epsilon.
    let lambda_hi = 0.25 / bound;
    let err_hi = mul_unit_sup_error(activation, x0, lambda_hi, bound);
    let (lambda, achieved) = if err_hi <= epsilon {
        (lambda_hi, err_hi)
    } else {
        let mut feasible: Option<(f64, f64)> = None;
        let mut infeasible = lambda_hi;
        let mut best = (lambda_hi, err_hi);
        let mut lambda = lambda_hi;
        for _ in 0..60 {
            lambda *= 0.5;
            let e = mul_unit_sup_error(activation, x0, lambda, bound);
            if e < best.1 {
                best = (lambda, e);
            }
            if e <= epsilon {
                feasible = Some((lambda, e));
                break;
            }
            if e > 4.0 * best.1 {
                // well past the floating-point floor
                break;
            }
            infeasible = lambda;
        }
        let Some((mut lo, mut err_feasible)) = feasible else {
            return Err(ConvError::MulUnitUnreachable { requested: epsilon, best: best.1 });
        };
        let mut hi = infeasible;
        for _ in 0..40 {
            if hi / lo < 1.0 + 1e-6 {
                break;
            }
            let mid = num::sqrt(lo * hi);
            let e = mul_unit_sup_error(activation, x0, mid, bound);
            if e <= epsilon {
                lo = mid;
                err_feasible = e;
            } else {
                hi = mid;
            }
        }
        (lo, err_feasible)
    };
    Ok(MulUnit {
        activation,
        x0,
        lambda,
        bound,
        epsilon,
        achieved,
        weight_count: MUL_UNIT_WEIGHTS,
        layers: 2,
    })
}

/// Elementwise approximate multiplication of two fields.
pub fn mul_apply(unit: &MulUnit, x: &Field, y: &Field) -> Result<Field, ConvError> {
    if x.m() != y.m() {
        return Err(ConvError::ShapeMismatch { what: "mul_apply operands" });
    }
    let limit = unit.bound * (1.0 + 1e-12);
    let mut max_abs = 0.0f64;
    for &v in x.as_slice().iter().chain(y.as_slice()) {
        max_abs = max_abs.max(num::abs(v));
    }
    if max_abs > limit {
        return Err(ConvError::InputBound { max_abs, bound: unit.bound });
    }
    let mut out = Field::zeros(x.m());
    let o = out.as_mut_slice();
    for i in 0..o.len() {
        o[i] = unit.eval(x.as_slice()[i], y.as_slice()[i]);
    }
    Ok(out)
}

/// Operator application with the exact pointwise products replaced by the
/// approximate multiplication unit; deviates from the exact path by at most
/// six times the unit's error.
pub fn approx_conv_apply_operator(
    ups: &TriangleIntegrals,
    u: &Field,
    level: usize,
    set: &KernelSet,
    unit: &MulUnit,
) -> Result<Field, ConvError> {
    let m = ups.m();
    if u.m() != m {
        return Err(ConvError::ShapeMismatch { what: "operator input" });
    }
    let mut out = Field::zeros(m);
    for k in 0..6 {
        let pass = conv2d(TensorView::from_field(u), &set.op_kernels(level)[k])?.into_field()?;
        let chan = Field::from_vec(m, ups.chan(k).to_vec())
            .map_err(|_| ConvError::ShapeMismatch { what: "integral channel" })?;
        let prod = mul_apply(unit, &chan, &pass)?;
        let o = out.as_mut_slice();
        for (oi, pi) in o.iter_mut().zip(prod.as_slice()) {
            *oi += pi;
        }
    }
    Ok(out)
}

/// Parameter count of the unrolled conv-multigrid network with `m` V-cycles
/// on `level_count` levels, `k` smoothing steps per level and `k0` coarsest
/// steps.
///
/// Per-stage ledger (every kernel entry and bias instantiated):
/// * operator application: six 3x3 kernels (54) + six multiplication units
///   (6 x 9 = 54) + the channel combination (6 products, `u`, `f`: 8), so
///   one smoothing or residual stage costs 116;
/// * residual restriction: 9;
/// * integral coarsening: 6 x 6 x 9 = 324;
/// * prolongation and correction add: 9 + 2 = 11;
/// * input integration kernel: 54; output selection: 1.
///
/// A cycle with `k = k0 = 0` computes the zero correction everywhere and
/// prunes to nothing, leaving only the in/out plumbing.
pub fn count_weights(level_count: usize, k: usize, k0: usize, m: usize) -> u64 {
    const STAGE: u64 = 54 + 54 + 8;
    const RESTRICT: u64 = 9;
    const COARSEN: u64 = 324;
    const PROLONG: u64 = 11;
    const INPUT: u64 = 54;
    const OUTPUT: u64 = 1;
    let l = level_count as u64;
    let per_cycle = if k == 0 && k0 == 0 {
        0
    } else {
        (l - 1) * (2 * k as u64 * STAGE + STAGE + RESTRICT + COARSEN + PROLONG)
            + k0 as u64 * STAGE
    };
    INPUT + OUTPUT + m as u64 * per_cycle
}

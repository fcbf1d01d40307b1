//! Damped-Richardson multigrid: smoothing, V-cycles, contraction
//! measurement, and the multilevel solve schedule.
//!
//! The V-cycle follows the textbook recursion: pre-smoothing, restricted
//! residual, recursive coarse correction, prolongated update, post-smoothing.
//! On the coarsest level the correction is either a direct banded solve or
//! `k0` Richardson steps; the latter keeps every operation expressible as a
//! convolution, which the conv path exploits.
//!
//! Coarse operators come from exact re-integration of the fine coefficient
//! (channel coarsening of the triangle integrals), not from matrix triple
//! products; the Galerkin-consistency tests certify the two coincide.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::fe::{
    self, apply_operator, assemble_banded_from_integrals, coarsen_triangle_integrals,
    triangle_integrals, TriangleIntegrals,
};
use crate::grid::{ExtendedField, Field, GridHierarchy, PROLONG_WEIGHTS};
use crate::linalg::{dot, norm2, BandedCholesky, LinalgError};
use crate::num;
use crate::rng::SampleRng;

#[derive(Debug, Clone, PartialEq)]
pub enum MgError {
    Fe(fe::FeError),
    Grid(crate::grid::GridError),
    Linalg(LinalgError),
    BadConfig(&'static str),
    BadContractionEstimate(f64),
    SizeGuardExceeded { dof: usize, max: usize },
}

impl fmt::Display for MgError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MgError::Fe(e) => write!(f, "{e}"),
            MgError::Grid(e) => write!(f, "{e}"),
            MgError::Linalg(e) => write!(f, "{e}"),
            MgError::BadConfig(s) => write!(f, "invalid solver configuration: {s}"),
            MgError::BadContractionEstimate(mu) => {
                write!(f, "contraction estimate must lie in (0,1), got {mu}")
            }
            MgError::SizeGuardExceeded { dof, max } => {
                write!(f, "reference solve guard: dof {dof} exceeds {max}")
            }
        }
    }
}

impl From<fe::FeError> for MgError {
    fn from(e: fe::FeError) -> Self {
        MgError::Fe(e)
    }
}

impl From<crate::grid::GridError> for MgError {
    fn from(e: crate::grid::GridError) -> Self {
        MgError::Grid(e)
    }
}

impl From<LinalgError> for MgError {
    fn from(e: LinalgError) -> Self {
        MgError::Linalg(e)
    }
}

/// Coarsest-level treatment inside a V-cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoarseSolve {
    /// Direct banded Cholesky solve of the coarsest system.
    Direct,
    /// `k0` damped Richardson steps; keeps the whole cycle convolutional.
    Richardson(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OmegaMode {
    Fixed(f64),
    /// Per-level `0.9 / lambda_max` via power iteration on the operator.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VCycleConfig {
    pub k_pre: usize,
    pub k_post: usize,
    pub coarse: CoarseSolve,
    pub omega: OmegaMode,
    /// Number of V-cycles a solve runs (at most, when `residual_tol` is set).
    pub cycles: usize,
    /// Optional early stop on the relative Euclidean residual.
    pub residual_tol: Option<f64>,
}

impl VCycleConfig {
    /// `k` pre- and post-smoothing steps, direct coarse solve, automatic
    /// damping, `m` cycles.
    pub fn with_smoothing(k: usize, m: usize) -> Self {
        VCycleConfig {
            k_pre: k,
            k_post: k,
            coarse: CoarseSolve::Direct,
            omega: OmegaMode::Auto,
            cycles: m,
            residual_tol: None,
        }
    }

    pub fn validate(&self) -> Result<(), MgError> {
        if let OmegaMode::Fixed(w) = self.omega {
            if !(w > 0.0) {
                return Err(MgError::BadConfig("fixed damping must be positive"));
            }
        }
        if let Some(t) = self.residual_tol {
            if !(t > 0.0) {
                return Err(MgError::BadConfig("residual tolerance must be positive"));
            }
        }
        Ok(())
    }
}

/// The linear actions a V-cycle needs on one level. The classical path uses
/// direct stencil loops; the conv path routes the same arithmetic through
/// generic convolutions. Both must keep the window-row-major summation
/// order so results agree exactly.
pub trait MgOps {
    fn apply(&self, level: usize, ups: &TriangleIntegrals, u: &Field) -> Field;
    fn restrict(&self, fine: &Field) -> Field;
    fn prolong(&self, coarse: &Field) -> Field;
}

/// Classical stencil/index-arithmetic realisation.
pub struct StencilOps;

impl MgOps for StencilOps {
    fn apply(&self, _level: usize, ups: &TriangleIntegrals, u: &Field) -> Field {
        apply_operator(ups, u).expect("operator stack dimensions are consistent")
    }

    fn restrict(&self, fine: &Field) -> Field {
        restrict_field(fine)
    }

    fn prolong(&self, coarse: &Field) -> Field {
        prolong_field(coarse)
    }
}

/// Weighted restriction `P^T`: coarse vertices sit at odd fine indices, the
/// 3x3 window is the transposed embedding weights.
pub fn restrict_field(fine: &Field) -> Field {
    let mf = fine.m();
    debug_assert!(mf >= 3 && mf % 2 == 1);
    let mc = (mf - 1) / 2;
    Field::from_fn(mc, |rr, cc| {
        let (fr, fc) = (2 * rr + 1, 2 * cc + 1);
        let mut acc = 0.0;
        for dr in -1i32..=1 {
            for dc in -1i32..=1 {
                let w = PROLONG_WEIGHTS[(dr + 1) as usize][(dc + 1) as usize];
                if w == 0.0 {
                    continue;
                }
                acc += w * fine.at((fr as i32 + dr) as usize, (fc as i32 + dc) as usize);
            }
        }
        acc
    })
}

/// Canonical embedding `P`: gather form of the transpose-strided scatter.
pub fn prolong_field(coarse: &Field) -> Field {
    let mc = coarse.m();
    let mf = 2 * mc + 1;
    Field::from_fn(mf, |r, c| {
        let mut acc = 0.0;
        for dr in -1i32..=1 {
            for dc in -1i32..=1 {
                let w = PROLONG_WEIGHTS[(dr + 1) as usize][(dc + 1) as usize];
                if w == 0.0 {
                    continue;
                }
                let ar = r as i32 - dr;
                let ac = c as i32 - dc;
                if ar < 1 || ac < 1 || ar % 2 == 0 || ac % 2 == 0 {
                    continue;
                }
                let (pr, pc) = ((ar as usize - 1) / 2, (ac as usize - 1) / 2);
                if pr < mc && pc < mc {
                    acc += w * coarse.at(pr, pc);
                }
            }
        }
        acc
    })
}

/// Per-level operator data for one coefficient realisation.
#[derive(Debug, Clone)]
pub struct StackLevel {
    pub ups: TriangleIntegrals,
    pub omega: f64,
}

/// Triangle integrals and damping for levels `1..=L`, plus the factorised
/// coarsest operator when direct coarse solves are requested.
pub struct OperatorStack {
    levels: Vec<StackLevel>,
    coarse_factor: Option<BandedCholesky>,
}

impl OperatorStack {
    /// Builds the stack from the fine-level coefficient: integrate once on
    /// the finest level, then coarsen exactly level by level.
    pub fn build(
        kappa: &ExtendedField,
        hier: &GridHierarchy,
        cfg: &VCycleConfig,
    ) -> Result<Self, MgError> {
        let fine = hier.finest();
        let ups_fine = triangle_integrals(kappa, fine)?;
        let mut chain = Vec::with_capacity(hier.level_count());
        chain.push(ups_fine);
        for _ in 1..hier.level_count() {
            let next = coarsen_triangle_integrals(chain.last().unwrap());
            chain.push(next);
        }
        chain.reverse(); // index 0 = coarsest
        Self::from_integral_chain(chain, cfg, |ups, u| {
            apply_operator(ups, u).expect("chain dimensions are consistent")
        })
    }

    /// Assembles omegas and the coarse factor around a prebuilt chain
    /// (index 0 = coarsest). The caller supplies the operator action so the
    /// conv path can seed its stack through convolutions.
    pub fn from_integral_chain(
        chain: Vec<TriangleIntegrals>,
        cfg: &VCycleConfig,
        apply: impl Fn(&TriangleIntegrals, &Field) -> Field,
    ) -> Result<Self, MgError> {
        cfg.validate()?;
        let mut levels = Vec::with_capacity(chain.len());
        for ups in chain.into_iter() {
            let omega = match cfg.omega {
                OmegaMode::Fixed(w) => w,
                OmegaMode::Auto => estimate_omega_with(&ups, &apply),
            };
            levels.push(StackLevel { ups, omega });
        }
        let coarse_factor = match cfg.coarse {
            CoarseSolve::Direct => {
                Some(assemble_banded_from_integrals(&levels[0].ups).cholesky()?)
            }
            CoarseSolve::Richardson(_) => None,
        };
        Ok(OperatorStack { levels, coarse_factor })
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// 1-based level access.
    pub fn level(&self, l: usize) -> &StackLevel {
        &self.levels[l - 1]
    }
}

/// Damped Richardson iteration `u <- u + omega (f - A u)`, `steps` times.
pub fn richardson(
    u: &Field,
    f: &Field,
    ups: &TriangleIntegrals,
    omega: f64,
    steps: usize,
) -> Result<Field, MgError> {
    if !(omega > 0.0) {
        return Err(MgError::BadConfig("damping must be positive"));
    }
    if u.m() != ups.m() || f.m() != ups.m() {
        return Err(MgError::Fe(fe::FeError::DimensionMismatch {
            expected: ups.dof(),
            got: u.len(),
        }));
    }
    let mut current = u.clone();
    for _ in 0..steps {
        current = richardson_step(&StencilOps, 1, ups, &current, f, omega);
    }
    Ok(current)
}

fn richardson_step(
    ops: &impl MgOps,
    level: usize,
    ups: &TriangleIntegrals,
    u: &Field,
    f: &Field,
    omega: f64,
) -> Field {
    let au = ops.apply(level, ups, u);
    let mut out = u.clone();
    let o = out.as_mut_slice();
    for i in 0..o.len() {
        o[i] += omega * (f.as_slice()[i] - au.as_slice()[i]);
    }
    out
}

/// Damping estimate `0.9 / lambda_max` from 50 power-iteration steps with a
/// fixed start vector; deterministic for a given operator.
pub fn estimate_omega(ups: &TriangleIntegrals) -> f64 {
    estimate_omega_with(ups, &|ups, u| {
        apply_operator(ups, u).expect("dimensions consistent")
    })
}

pub(crate) fn estimate_omega_with(
    ups: &TriangleIntegrals,
    apply: &impl Fn(&TriangleIntegrals, &Field) -> Field,
) -> f64 {
    let m = ups.m();
    let mut rng = SampleRng::new(0x6f6d_6567_615f_7631, m as u64);
    let mut v = Field::from_fn(m, |_, _| rng.uniform_pm1());
    let mut nrm = norm2(v.as_slice());
    for x in v.as_mut_slice() {
        *x /= nrm;
    }
    let mut av = apply(ups, &v);
    for _ in 0..50 {
        nrm = norm2(av.as_slice());
        for x in av.as_mut_slice() {
            *x /= nrm;
        }
        v = av;
        av = apply(ups, &v);
    }
    let lambda = dot(v.as_slice(), av.as_slice()) / dot(v.as_slice(), v.as_slice());
    0.9 / lambda
}

/// One V-cycle on level `l` (1-based) with the classical stencil operations.
pub fn v_cycle(
    u: &Field,
    f: &Field,
    stack: &OperatorStack,
    cfg: &VCycleConfig,
    l: usize,
) -> Result<Field, MgError> {
    v_cycle_ops(&StencilOps, u, f, stack, cfg, l)
}

pub fn v_cycle_ops(
    ops: &impl MgOps,
    u: &Field,
    f: &Field,
    stack: &OperatorStack,
    cfg: &VCycleConfig,
    l: usize,
) -> Result<Field, MgError> {
    if l < 1 || l > stack.level_count() {
        return Err(MgError::BadConfig("cycle level outside the stack"));
    }
    let lv = stack.level(l);
    if u.m() != lv.ups.m() || f.m() != lv.ups.m() {
        return Err(MgError::Fe(fe::FeError::DimensionMismatch {
            expected: lv.ups.dof(),
            got: u.len(),
        }));
    }
    Ok(v_cycle_inner(ops, u.clone(), f, stack, cfg, l))
}

fn v_cycle_inner(
    ops: &impl MgOps,
    mut u: Field,
    f: &Field,
    stack: &OperatorStack,
    cfg: &VCycleConfig,
    l: usize,
) -> Field {
    let lv = stack.level(l);
    if l == 1 {
        return match cfg.coarse {
            CoarseSolve::Direct => {
                let factor = stack
                    .coarse_factor
                    .as_ref()
                    .expect("direct coarse mode implies a factorised coarse operator");
                let x = factor.solve(f.as_slice()).expect("coarse solve dimensions");
                Field::from_vec(lv.ups.m(), x).expect("coarse solve dimensions")
            }
            CoarseSolve::Richardson(k0) => {
                for _ in 0..k0 {
                    u = richardson_step(ops, l, &lv.ups, &u, f, lv.omega);
                }
                u
            }
        };
    }
    for _ in 0..cfg.k_pre {
        u = richardson_step(ops, l, &lv.ups, &u, f, lv.omega);
    }
    // restricted residual
    let au = ops.apply(l, &lv.ups, &u);
    let mut r = f.clone();
    for (ri, ai) in r.as_mut_slice().iter_mut().zip(au.as_slice()) {
        *ri -= ai;
    }
    let rc = ops.restrict(&r);
    let zero = Field::zeros(stack.level(l - 1).ups.m());
    let e = v_cycle_inner(ops, zero, &rc, stack, cfg, l - 1);
    let ef = ops.prolong(&e);
    for (ui, ei) in u.as_mut_slice().iter_mut().zip(ef.as_slice()) {
        *ui += ei;
    }
    for _ in 0..cfg.k_post {
        u = richardson_step(ops, l, &lv.ups, &u, f, lv.omega);
    }
    u
}

/// Result of an iterated multigrid solve.
#[derive(Debug, Clone)]
pub struct MgRun {
    pub u: Field,
    pub cycles_run: usize,
    /// Relative Euclidean residual after each cycle.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

/// Runs `cfg.cycles` V-cycles from `u0` on the finest level of `hier`,
/// stopping early once `cfg.residual_tol` is met (when set).
pub fn mg_solve(
    u0: &Field,
    kappa: &ExtendedField,
    f: &Field,
    cfg: &VCycleConfig,
    hier: &GridHierarchy,
) -> Result<MgRun, MgError> {
    let stack = OperatorStack::build(kappa, hier, cfg)?;
    mg_solve_with_stack(&StencilOps, u0, f, &stack, cfg)
}

pub fn mg_solve_with_stack(
    ops: &impl MgOps,
    u0: &Field,
    f: &Field,
    stack: &OperatorStack,
    cfg: &VCycleConfig,
) -> Result<MgRun, MgError> {
    cfg.validate()?;
    let top = stack.level_count();
    let f_norm = norm2(f.as_slice());
    let mut u = u0.clone();
    let mut residuals = Vec::with_capacity(cfg.cycles);
    let mut cycles_run = 0;
    for _ in 0..cfg.cycles {
        u = v_cycle_ops(ops, &u, f, stack, cfg, top)?;
        cycles_run += 1;
        let au = ops.apply(top, &stack.level(top).ups, &u);
        let mut res = 0.0;
        for (fi, ai) in f.as_slice().iter().zip(au.as_slice()) {
            let d = fi - ai;
            res += d * d;
        }
        let rel = num::sqrt(res) / if f_norm > 0.0 { f_norm } else { 1.0 };
        residuals.push(rel);
        if let Some(tol) = cfg.residual_tol {
            if rel <= tol {
                break;
            }
        }
    }
    let converged = match cfg.residual_tol {
        Some(tol) => residuals.last().is_some_and(|&r| r <= tol),
        None => true,
    };
    Ok(MgRun { u, cycles_run, residuals, converged })
}

/// Energy norm `sqrt(e^T A e)` through the stencil operator.
pub fn energy_norm(ups: &TriangleIntegrals, e: &Field) -> f64 {
    let ae = apply_operator(ups, e).expect("dimensions consistent");
    num::sqrt(dot(e.as_slice(), ae.as_slice()).max(0.0))
}

/// Per-cycle energy-norm error ratios of the V-cycle iteration against the
/// direct discrete solution. Ratios stop once the error reaches the
/// floating-point floor relative to the initial error.
pub fn measure_contraction(
    kappa: &ExtendedField,
    f: &Field,
    cfg: &VCycleConfig,
    hier: &GridHierarchy,
) -> Result<Vec<f64>, MgError> {
    let dof = hier.finest().dof();
    if dof > fe::DENSE_GUARD {
        return Err(MgError::SizeGuardExceeded { dof, max: fe::DENSE_GUARD });
    }
    let stack = OperatorStack::build(kappa, hier, cfg)?;
    let top = stack.level_count();
    let ups_top = &stack.level(top).ups;
    let exact = assemble_banded_from_integrals(ups_top)
        .cholesky()?
        .solve(f.as_slice())?;
    let exact = Field::from_vec(ups_top.m(), exact).expect("solve length");

    let mut u = Field::zeros(ups_top.m());
    let mut err = diff(&u, &exact);
    let mut e_norm = energy_norm(ups_top, &err);
    let floor = e_norm * 1e-13;
    let mut ratios = Vec::with_capacity(cfg.cycles);
    for _ in 0..cfg.cycles {
        u = v_cycle_ops(&StencilOps, &u, f, &stack, cfg, top)?;
        err = diff(&u, &exact);
        let next = energy_norm(ups_top, &err);
        if e_norm <= floor {
            break;
        }
        ratios.push(next / e_norm);
        e_norm = next;
    }
    Ok(ratios)
}

fn diff(a: &Field, b: &Field) -> Field {
    let mut out = a.clone();
    for (x, y) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *x -= y;
    }
    out
}

/// Outcome of the multilevel schedule solve.
#[derive(Debug, Clone)]
pub struct MlRun {
    /// Accumulated approximation on each level, `levels[l-1]` on level `l`.
    pub levels: Vec<Field>,
    /// The multigrid output for each level's correction equation.
    pub corrections: Vec<Field>,
    /// V-cycles spent per level.
    pub schedule: Vec<usize>,
}

/// V-cycle counts per level for a target accuracy `eps` and measured
/// contraction `mu`: a constant number of cycles per intermediate level and
/// a top-level count growing like `log(L / eps) - L log 2`.
pub fn ml_schedule(mu: f64, eps: f64, level_count: usize) -> Result<Vec<usize>, MgError> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(MgError::BadContractionEstimate(mu));
    }
    if !(eps > 0.0) {
        return Err(MgError::BadConfig("target accuracy must be positive"));
    }
    let rate = num::ln(1.0 / mu);
    let per_level = (num::ceil(num::ln(2.0) / rate) as usize).max(1);
    let lc = level_count as f64;
    let top_raw = (num::ln(2.0 * lc / eps) - lc * num::ln(2.0)) / rate;
    let top = if top_raw > 0.0 { num::ceil(top_raw) as usize } else { 0 }.max(1);
    let mut schedule = vec![per_level; level_count];
    schedule[level_count - 1] = top;
    Ok(schedule)
}

/// Multilevel solve: coarsest solve first, then per level a corrected
/// right-hand side `f_l - A_l P v_{l-1}`, a fixed number of V-cycles for the
/// correction, and prolongated accumulation.
pub fn ml_solve(
    kappa: &ExtendedField,
    f: &Field,
    hier: &GridHierarchy,
    eps_target: f64,
    k: usize,
    mu_estimate: f64,
) -> Result<MlRun, MgError> {
    let lcount = hier.level_count();
    let schedule = ml_schedule(mu_estimate, eps_target, lcount)?;
    let cfg = VCycleConfig::with_smoothing(k, 1);
    let stack = OperatorStack::build(kappa, hier, &cfg)?;

    // Galerkin right-hand sides on every level via weighted restriction.
    let mut rhs = vec![f.clone()];
    for _ in 1..lcount {
        let next = restrict_field(rhs.last().unwrap());
        rhs.push(next);
    }
    rhs.reverse(); // index 0 = coarsest

    let ops = StencilOps;
    let mut levels: Vec<Field> = Vec::with_capacity(lcount);
    let mut corrections: Vec<Field> = Vec::with_capacity(lcount);

    // coarsest level
    let mut v = Field::zeros(stack.level(1).ups.m());
    for _ in 0..schedule[0] {
        v = v_cycle_ops(&ops, &v, &rhs[0], &stack, &cfg, 1)?;
    }
    corrections.push(v.clone());
    levels.push(v);

    for l in 2..=lcount {
        let prev = levels[l - 2].clone();
        let lifted = prolong_field(&prev);
        let a_lifted = ops.apply(l, &stack.level(l).ups, &lifted);
        let mut g = rhs[l - 1].clone();
        for (gi, ai) in g.as_mut_slice().iter_mut().zip(a_lifted.as_slice()) {
            *gi -= ai;
        }
        let mut c = Field::zeros(stack.level(l).ups.m());
        for _ in 0..schedule[l - 1] {
            c = v_cycle_ops(&ops, &c, &g, &stack, &cfg, l)?;
        }
        let mut v = lifted;
        for (vi, ci) in v.as_mut_slice().iter_mut().zip(c.as_slice()) {
            *vi += ci;
        }
        corrections.push(c);
        levels.push(v);
    }
    Ok(MlRun { levels, corrections, schedule })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{evaluate_kappa_extended, sample_parameters, FieldKind, FieldSpec};
    use crate::grid::ExtendPolicy;

    fn const_kappa(hier: &GridHierarchy, v: f64) -> ExtendedField {
        ExtendedField::constant(hier.finest().cells_per_side(), v)
    }

    #[test]
    fn richardson_zero_steps_and_fixed_point() {
        let hier = GridHierarchy::build(5, 1).unwrap();
        let level = hier.level(1).unwrap();
        let kappa = const_kappa(&hier, 1.0);
        let ups = triangle_integrals(&kappa, level).unwrap();
        let f = fe::rhs_vector(level, 1.0);
        let mut rng = SampleRng::new(31, 0);
        let u = Field::from_fn(level.interior_per_side(), |_, _| rng.uniform_pm1());
        let same = richardson(&u, &f, &ups, 0.1, 0).unwrap();
        assert_eq!(same, u);

        // exact solution is a fixed point
        let exact = assemble_banded_from_integrals(&ups)
            .cholesky()
            .unwrap()
            .solve(f.as_slice())
            .unwrap();
        let exact = Field::from_vec(level.interior_per_side(), exact).unwrap();
        let stepped = richardson(&exact, &f, &ups, 0.1, 3).unwrap();
        for (a, b) in stepped.as_slice().iter().zip(exact.as_slice()) {
            assert!(num::abs(a - b) < 1e-12);
        }
    }

    #[test]
    fn richardson_energy_error_decreases() {
        // lambda_max(A) <= 8 for the five-point stencil, so omega = 1/8 is safe
        let hier = GridHierarchy::build(10, 1).unwrap();
        let level = hier.level(1).unwrap();
        let kappa = const_kappa(&hier, 1.0);
        let ups = triangle_integrals(&kappa, level).unwrap();
        let f = fe::rhs_vector(level, 1.0);
        let exact = assemble_banded_from_integrals(&ups)
            .cholesky()
            .unwrap()
            .solve(f.as_slice())
            .unwrap();
        let exact = Field::from_vec(level.interior_per_side(), exact).unwrap();
        let mut u = Field::zeros(level.interior_per_side());
        let mut prev = energy_norm(&ups, &diff(&u, &exact));
        for _ in 0..200 {
            u = richardson(&u, &f, &ups, 1.0 / 8.0, 1).unwrap();
            let e = energy_norm(&ups, &diff(&u, &exact));
            assert!(e < prev, "energy error must decrease monotonically");
            prev = e;
        }
    }

    #[test]
    fn omega_estimate_brackets_closed_form() {
        let hier = GridHierarchy::build(8, 1).unwrap();
        let level = hier.level(1).unwrap();
        let kappa = const_kappa(&hier, 1.0);
        let ups = triangle_integrals(&kappa, level).unwrap();
        let n = level.cells_per_side() as f64;
        let lambda_true = 4.0 + 4.0 * num::cos(core::f64::consts::PI / n);
        let omega = estimate_omega(&ups);
        assert!(omega >= 0.9 / 8.0 * 0.98, "omega {omega}");
        assert!(omega <= 1.02 / lambda_true, "omega {omega} vs 1/{lambda_true}");
        // determinism
        assert_eq!(omega, estimate_omega(&ups));
        // linearity: doubling kappa halves omega
        let kappa2 = const_kappa(&hier, 2.0);
        let ups2 = triangle_integrals(&kappa2, level).unwrap();
        let omega2 = estimate_omega(&ups2);
        assert!(num::abs(omega2 - omega / 2.0) / (omega / 2.0) < 0.02);
    }

    #[test]
    fn coarsest_direct_cycle_is_direct_solve() {
        let hier = GridHierarchy::build(5, 1).unwrap();
        let level = hier.level(1).unwrap();
        let kappa = const_kappa(&hier, 1.3);
        let cfg = VCycleConfig::with_smoothing(2, 1);
        let stack = OperatorStack::build(&kappa, &hier, &cfg).unwrap();
        let f = fe::rhs_vector(level, 1.0);
        let u = v_cycle(&Field::zeros(level.interior_per_side()), &f, &stack, &cfg, 1).unwrap();
        let ups = triangle_integrals(&kappa, level).unwrap();
        let direct = assemble_banded_from_integrals(&ups)
            .cholesky()
            .unwrap()
            .solve(f.as_slice())
            .unwrap();
        for (a, b) in u.as_slice().iter().zip(&direct) {
            assert!(num::abs(a - b) < 1e-14);
        }
    }

    #[test]
    fn v_cycle_keeps_exact_solution_and_contracts() {
        let hier = GridHierarchy::build(4, 3).unwrap();
        let level = hier.finest();
        let kappa = const_kappa(&hier, 1.0);
        let cfg = VCycleConfig::with_smoothing(3, 1);
        let stack = OperatorStack::build(&kappa, &hier, &cfg).unwrap();
        let f = fe::rhs_vector(level, 1.0);
        let ups = &stack.level(hier.level_count()).ups;
        let exact = assemble_banded_from_integrals(ups)
            .cholesky()
            .unwrap()
            .solve(f.as_slice())
            .unwrap();
        let exact = Field::from_vec(level.interior_per_side(), exact).unwrap();

        // starting at the exact solution stays there (residual ~ 0)
        let stay = v_cycle(&exact, &f, &stack, &cfg, hier.level_count()).unwrap();
        let a_stay = apply_operator(ups, &stay).unwrap();
        let mut rnorm = 0.0;
        for (fi, ai) in f.as_slice().iter().zip(a_stay.as_slice()) {
            rnorm += (fi - ai) * (fi - ai);
        }
        assert!(num::sqrt(rnorm) <= 1e-12 * norm2(f.as_slice()));

        // one cycle from zero contracts the energy error
        let u1 = v_cycle(&Field::zeros(level.interior_per_side()), &f, &stack, &cfg, hier.level_count()).unwrap();
        let e0 = energy_norm(ups, &exact);
        let e1 = energy_norm(ups, &diff(&u1, &exact));
        assert!(e1 < e0, "one V-cycle must reduce the energy error");
    }

    #[test]
    fn mg_solve_matches_direct_and_is_linear() {
        let hier = GridHierarchy::build(5, 3).unwrap();
        let level = hier.finest();
        let spec = FieldSpec::new(FieldKind::UniformSmooth, 8).unwrap();
        let y = sample_parameters(&spec, 17, 0);
        let kappa = evaluate_kappa_extended(&spec, &y, level).unwrap();
        let f = fe::rhs_vector(level, 1.0);
        let cfg = VCycleConfig::with_smoothing(3, 30);
        let run = mg_solve(&Field::zeros(level.interior_per_side()), &kappa, &f, &cfg, &hier).unwrap();

        let ups = triangle_integrals(&kappa, level).unwrap();
        let direct = assemble_banded_from_integrals(&ups)
            .cholesky()
            .unwrap()
            .solve(f.as_slice())
            .unwrap();
        let direct = Field::from_vec(level.interior_per_side(), direct).unwrap();
        let err = fe::h1_norm(&diff(&run.u, &direct), level).unwrap();
        let scale = fe::h1_norm(&direct, level).unwrap();
        assert!(err / scale < 1e-10, "relative H1 error {}", err / scale);

        // linearity in f for fixed zero start
        let mut f3 = f.clone();
        for v in f3.as_mut_slice() {
            *v *= 3.0;
        }
        let run3 = mg_solve(&Field::zeros(level.interior_per_side()), &kappa, &f3, &cfg, &hier).unwrap();
        for (a, b) in run3.u.as_slice().iter().zip(run.u.as_slice()) {
            assert!(num::abs(a - 3.0 * b) <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn lognormal_residuals_decrease_monotonically() {
        let hier = GridHierarchy::build(5, 3).unwrap();
        let spec = FieldSpec::new(FieldKind::LogNormalSmooth, 10).unwrap();
        let y = sample_parameters(&spec, 19, 3);
        let kappa = evaluate_kappa_extended(&spec, &y, hier.finest()).unwrap();
        let f = fe::rhs_vector(hier.finest(), 1.0);
        let cfg = VCycleConfig::with_smoothing(3, 12);
        let run = mg_solve(
            &Field::zeros(hier.finest().interior_per_side()),
            &kappa,
            &f,
            &cfg,
            &hier,
        )
        .unwrap();
        for w in run.residuals.windows(2) {
            assert!(w[1] < w[0], "residuals {:?}", run.residuals);
        }
    }

    #[test]
    fn contraction_ratios_below_one_and_improving_in_k() {
        let hier = GridHierarchy::build(5, 3).unwrap();
        let kappa = const_kappa(&hier, 1.0);
        let f = fe::rhs_vector(hier.finest(), 1.0);
        let mut medians = Vec::new();
        for k in [1usize, 2, 4] {
            let mut cfg = VCycleConfig::with_smoothing(k, 6);
            cfg.coarse = CoarseSolve::Direct;
            let mut ratios = measure_contraction(&kappa, &f, &cfg, &hier).unwrap();
            assert!(ratios.iter().all(|&r| r < 1.0), "k={k}: {ratios:?}");
            ratios.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            medians.push(ratios[ratios.len() / 2]);
        }
        assert!(medians[0] >= medians[1] && medians[1] >= medians[2], "{medians:?}");
    }

    #[test]
    fn inexact_coarse_solve_changes_little() {
        let hier = GridHierarchy::build(5, 3).unwrap();
        let spec = FieldSpec::new(FieldKind::UniformSmooth, 6).unwrap();
        let y = sample_parameters(&spec, 23, 1);
        let kappa = evaluate_kappa_extended(&spec, &y, hier.finest()).unwrap();
        let f = fe::rhs_vector(hier.finest(), 1.0);
        let zero = Field::zeros(hier.finest().interior_per_side());

        let mut cfg = VCycleConfig::with_smoothing(3, 30);
        cfg.residual_tol = Some(1e-11);
        let direct = mg_solve(&zero, &kappa, &f, &cfg, &hier).unwrap();
        assert!(direct.converged);

        cfg.coarse = CoarseSolve::Richardson(40);
        let inexact = mg_solve(&zero, &kappa, &f, &cfg, &hier).unwrap();
        assert!(inexact.converged);

        let d = fe::h1_norm(&diff(&direct.u, &inexact.u), hier.finest()).unwrap();
        let s = fe::h1_norm(&direct.u, hier.finest()).unwrap();
        let achieved = direct.residuals.last().unwrap().max(*inexact.residuals.last().unwrap());
        assert!(d / s <= achieved * 100.0, "difference {d} vs residual {achieved}");
    }

    #[test]
    fn ml_schedule_arithmetic() {
        let mu = 0.2f64;
        let eps = 1.0 / 16.0;
        let schedule = ml_schedule(mu, eps, 4).unwrap();
        let rate = num::ln(1.0 / mu);
        let per = (num::ln(2.0) / rate).ceil() as usize;
        for &m in &schedule[..3] {
            assert_eq!(m, per.max(1));
        }
        let expect_top =
            ((num::ln(2.0 * 4.0 / eps) - 4.0 * num::ln(2.0)) / rate).ceil().max(1.0) as usize;
        assert_eq!(schedule[3], expect_top);
        assert!(ml_schedule(1.1, eps, 4).is_err());
    }

    #[test]
    fn ml_solve_reaches_target_and_telescopes() {
        let hier = GridHierarchy::build(5, 3).unwrap();
        let spec = FieldSpec::new(FieldKind::UniformSmooth, 8).unwrap();
        let y = sample_parameters(&spec, 29, 2);
        let kappa = evaluate_kappa_extended(&spec, &y, hier.finest()).unwrap();
        let f = fe::rhs_vector(hier.finest(), 1.0);

        let mut cfg = VCycleConfig::with_smoothing(3, 8);
        let ratios = measure_contraction(&kappa, &f, &cfg, &hier).unwrap();
        let mut sorted = ratios.clone();
        sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let mu = sorted[sorted.len() / 2].clamp(0.01, 0.95);

        let eps = 1.0 / 8.0;
        let run = ml_solve(&kappa, &f, &hier, eps, 3, mu).unwrap();
        assert_eq!(run.schedule.len(), 3);

        // reference: converged multigrid
        cfg.cycles = 60;
        cfg.residual_tol = Some(1e-12);
        let reference = mg_solve(
            &Field::zeros(hier.finest().interior_per_side()),
            &kappa,
            &f,
            &cfg,
            &hier,
        )
        .unwrap();
        let err = fe::h1_norm(&diff(&run.levels[2], &reference.u), hier.finest()).unwrap();
        assert!(err <= eps * 1.0, "H1 error {err} vs target {eps}");

        // telescoping: v_l = P v_{l-1} + correction_l, exactly by construction
        for l in 2..=3usize {
            let lifted = prolong_field(&run.levels[l - 2]);
            for ((vi, li), ci) in run.levels[l - 1]
                .as_slice()
                .iter()
                .zip(lifted.as_slice())
                .zip(run.corrections[l - 1].as_slice())
            {
                assert_eq!(*vi, li + ci);
            }
        }
    }

    #[test]
    fn contraction_ratios_describe_the_solver_run() {
        // a posteriori consistency: the product of measured ratios bounds
        // the energy error of an independent solve with the same cycle count
        let hier = GridHierarchy::build(5, 3).unwrap();
        let spec = FieldSpec::new(FieldKind::UniformSmooth, 6).unwrap();
        let y = sample_parameters(&spec, 41, 0);
        let kappa = evaluate_kappa_extended(&spec, &y, hier.finest()).unwrap();
        let f = fe::rhs_vector(hier.finest(), 1.0);
        let cfg = VCycleConfig::with_smoothing(2, 6);
        let ratios = measure_contraction(&kappa, &f, &cfg, &hier).unwrap();
        let rho_max = ratios.iter().cloned().fold(0.0f64, f64::max);

        let stack = OperatorStack::build(&kappa, &hier, &cfg).unwrap();
        let ups = &stack.level(3).ups;
        let exact = assemble_banded_from_integrals(ups)
            .cholesky()
            .unwrap()
            .solve(f.as_slice())
            .unwrap();
        let exact = Field::from_vec(ups.m(), exact).unwrap();
        let run = mg_solve(&Field::zeros(ups.m()), &kappa, &f, &cfg, &hier).unwrap();
        let e0 = energy_norm(ups, &exact);
        let em = energy_norm(ups, &diff(&run.u, &exact));
        let bound = libm::pow(rho_max, run.cycles_run as f64) * e0;
        assert!(em <= bound * (1.0 + 1e-12), "{em} vs bound {bound}");
    }

    #[test]
    fn restriction_and_prolongation_match_matrices() {
        let hier = GridHierarchy::build(4, 2).unwrap();
        let p = hier.prolongation_matrix(1).unwrap();
        let mut rng = SampleRng::new(37, 0);
        let mc = hier.level(1).unwrap().interior_per_side();
        let mf = hier.level(2).unwrap().interior_per_side();
        for _ in 0..20 {
            let c = Field::from_fn(mc, |_, _| rng.uniform_pm1());
            let fine = prolong_field(&c);
            let via_matrix = p.matvec(c.as_slice()).unwrap();
            for (a, b) in fine.as_slice().iter().zip(&via_matrix) {
                assert!(num::abs(a - b) < 1e-15);
            }
            let r = Field::from_fn(mf, |_, _| rng.uniform_pm1());
            let coarse = restrict_field(&r);
            let via_matrix_t = p.matvec_transpose(r.as_slice()).unwrap();
            for (a, b) in coarse.as_slice().iter().zip(&via_matrix_t) {
                assert!(num::abs(a - b) < 1e-15);
            }
            // adjoint identity
            let lhs = dot(fine.as_slice(), r.as_slice());
            let rhs = dot(c.as_slice(), coarse.as_slice());
            assert!(num::abs(lhs - rhs) < 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn stack_requires_positive_coefficient() {
        // a strongly sign-indefinite coefficient breaks positive definiteness
        let hier = GridHierarchy::build(5, 2).unwrap();
        let kappa = ExtendedField::from_interior(
            &Field::from_fn(hier.finest().interior_per_side(), |r, c| {
                if (r + c) % 2 == 0 {
                    -1.0
                } else {
                    0.5
                }
            }),
            ExtendPolicy::NearestInterior,
        );
        let cfg = VCycleConfig::with_smoothing(2, 1);
        assert!(matches!(
            OperatorStack::build(&kappa, &hier, &cfg),
            Err(MgError::Linalg(LinalgError::NotPositiveDefinite { .. }))
        ));
    }
}

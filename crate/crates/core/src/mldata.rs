//! Multilevel training data: per-sample solves, level corrections,
//! normalisation constants, the decaying sample schedule, the training loss
//! on coefficients, and the inference-time recombination.
//!
//! A sample is solved once on its top level; coarser solutions come from
//! nodal interpolation (the cheap default) or, behind a flag, independent
//! per-level solves. Corrections are `v_l - P v_{l-1}` with `v_1` itself the
//! coarsest payload, so prolongating and summing all corrections rebuilds
//! the top-level solution exactly.

use alloc::vec::Vec;
use core::fmt;

use crate::fe::{self, FeError};
use crate::fields::{
    evaluate_kappa, evaluate_kappa_extended, sample_parameters, FieldError, FieldSpec, ParamVector,
};
use crate::grid::{Field, GridError, GridHierarchy};
use crate::multigrid::{mg_solve, prolong_field, MgError, VCycleConfig};
use crate::num;

#[derive(Debug, Clone, PartialEq)]
pub enum DataError {
    Mg(MgError),
    Fe(FeError),
    Grid(GridError),
    Field(FieldError),
    SolverStalled { achieved: f64, tolerance: f64 },
    ShapeMismatch { what: &'static str },
    ZeroNormalisation { level: usize },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Mg(e) => write!(f, "{e}"),
            DataError::Fe(e) => write!(f, "{e}"),
            DataError::Grid(e) => write!(f, "{e}"),
            DataError::Field(e) => write!(f, "{e}"),
            DataError::SolverStalled { achieved, tolerance } => {
                write!(f, "solver stalled at relative residual {achieved:e} (tolerance {tolerance:e})")
            }
            DataError::ShapeMismatch { what } => write!(f, "shape mismatch: {what}"),
            DataError::ZeroNormalisation { level } => {
                write!(f, "normalisation constant on level {level} is zero")
            }
        }
    }
}

impl From<MgError> for DataError {
    fn from(e: MgError) -> Self {
        DataError::Mg(e)
    }
}

impl From<FeError> for DataError {
    fn from(e: FeError) -> Self {
        DataError::Fe(e)
    }
}

impl From<GridError> for DataError {
    fn from(e: GridError) -> Self {
        DataError::Grid(e)
    }
}

impl From<FieldError> for DataError {
    fn from(e: FieldError) -> Self {
        DataError::Field(e)
    }
}

/// Per-level sample counts halving with each finer level: `ceil(n1 * 2^(1-l))`,
/// never below one.
pub fn decay_schedule(n1: usize, level_count: usize) -> Vec<usize> {
    (0..level_count)
        .map(|l| {
            let div = 1usize << l;
            n1.div_ceil(div).max(1)
        })
        .collect()
}

/// How coarser-level solutions are derived from a sample's solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoarseDerivation {
    /// Subsample the top-level solution at coarse vertices.
    NodalInterpolation,
    /// Solve the Galerkin problem independently on every level.
    GalerkinSolve,
}

#[derive(Debug, Clone)]
pub struct SampleSettings {
    pub solver: VCycleConfig,
    pub derivation: CoarseDerivation,
    pub f_const: f64,
}

impl Default for SampleSettings {
    fn default() -> Self {
        let mut solver = VCycleConfig::with_smoothing(3, 60);
        solver.residual_tol = Some(1e-10);
        SampleSettings {
            solver,
            derivation: CoarseDerivation::NodalInterpolation,
            f_const: 1.0,
        }
    }
}

/// One parameter draw with its per-level coefficients, solutions and
/// corrections up to `top_level`.
#[derive(Debug, Clone)]
pub struct MultilevelSample {
    pub index: u64,
    pub y: ParamVector,
    /// Interior nodal coefficient on levels `1..=top_level`.
    pub kappa: Vec<Field>,
    /// Solutions `v_l` on levels `1..=top_level`.
    pub solutions: Vec<Field>,
    /// Corrections: `corrections[0] = v_1`, then `v_l - P v_{l-1}`.
    pub corrections: Vec<Field>,
    pub top_level: usize,
}

impl MultilevelSample {
    pub fn solution_top(&self) -> &Field {
        self.solutions.last().expect("at least one level")
    }
}

/// Generates the sample for `(seed, index)` solved on the hierarchy's finest
/// level.
pub fn generate_sample(
    spec: &FieldSpec,
    hier: &GridHierarchy,
    settings: &SampleSettings,
    seed: u64,
    index: u64,
) -> Result<MultilevelSample, DataError> {
    generate_sample_to_level(spec, hier, settings, seed, index, hier.level_count())
}

/// Generates the sample solved on `top_level` only; used by the decaying
/// schedule where most samples never touch the finest grids.
pub fn generate_sample_to_level(
    spec: &FieldSpec,
    hier: &GridHierarchy,
    settings: &SampleSettings,
    seed: u64,
    index: u64,
    top_level: usize,
) -> Result<MultilevelSample, DataError> {
    let top = hier.level(top_level)?;
    let y = sample_parameters(spec, seed, index);

    let sub_hier = GridHierarchy::build(hier.coarse_cells(), top_level)?;
    let kappa_ext = evaluate_kappa_extended(spec, &y, top)?;
    let f = fe::rhs_vector(top, settings.f_const);
    let zero = Field::zeros(top.interior_per_side());
    let run = mg_solve(&zero, &kappa_ext, &f, &settings.solver, &sub_hier)?;
    if !run.converged {
        return Err(DataError::SolverStalled {
            achieved: run.residuals.last().copied().unwrap_or(f64::INFINITY),
            tolerance: settings.solver.residual_tol.unwrap_or(0.0),
        });
    }

    let mut solutions: Vec<Field> = Vec::with_capacity(top_level);
    match settings.derivation {
        CoarseDerivation::NodalInterpolation => {
            for l in 1..top_level {
                solutions.push(hier.nodal_interpolate_to_coarse(top_level, l, &run.u)?);
            }
            solutions.push(run.u);
        }
        CoarseDerivation::GalerkinSolve => {
            for l in 1..top_level {
                let level = hier.level(l)?;
                let k_ext = evaluate_kappa_extended(spec, &y, level)?;
                let fl = fe::rhs_vector(level, settings.f_const);
                let z = Field::zeros(level.interior_per_side());
                let lh = GridHierarchy::build(hier.coarse_cells(), l)?;
                let r = mg_solve(&z, &k_ext, &fl, &settings.solver, &lh)?;
                if !r.converged {
                    return Err(DataError::SolverStalled {
                        achieved: r.residuals.last().copied().unwrap_or(f64::INFINITY),
                        tolerance: settings.solver.residual_tol.unwrap_or(0.0),
                    });
                }
                solutions.push(r.u);
            }
            solutions.push(run.u);
        }
    }

    let mut corrections: Vec<Field> = Vec::with_capacity(top_level);
    corrections.push(solutions[0].clone());
    for l in 2..=top_level {
        let lifted = prolong_field(&solutions[l - 2]);
        let mut c = solutions[l - 1].clone();
        for (ci, li) in c.as_mut_slice().iter_mut().zip(lifted.as_slice()) {
            *ci -= li;
        }
        corrections.push(c);
    }

    let mut kappa = Vec::with_capacity(top_level);
    for l in 1..=top_level {
        kappa.push(evaluate_kappa(spec, &y, hier.level(l)?)?);
    }

    Ok(MultilevelSample { index, y, kappa, solutions, corrections, top_level })
}

/// Normalisation constants `delta_l = sqrt(mean ||correction_l||_2^2)` over
/// the first `counts[l-1]` samples (the ones that carry level `l`).
pub fn delta_constants(
    samples: &[MultilevelSample],
    counts: &[usize],
) -> Result<Vec<f64>, DataError> {
    let mut deltas = Vec::with_capacity(counts.len());
    for (li, &n_l) in counts.iter().enumerate() {
        let l = li + 1;
        let n_l = n_l.min(samples.len());
        if n_l == 0 {
            deltas.push(0.0);
            continue;
        }
        let mut acc = 0.0;
        for sample in &samples[..n_l] {
            if sample.top_level < l {
                return Err(DataError::ShapeMismatch {
                    what: "sample does not carry the requested level",
                });
            }
            let c = &sample.corrections[li];
            acc += crate::linalg::dot(c.as_slice(), c.as_slice());
        }
        deltas.push(num::sqrt(acc / n_l as f64));
    }
    Ok(deltas)
}

/// Training loss on coefficients: `sum_l d_l^T M_l d_l` with
/// `d_l = prediction_l - correction_l / delta_l` and `M_l` the H1 mass
/// matrix of level `l`.
pub fn h1_loss(
    predictions: &[Field],
    sample: &MultilevelSample,
    deltas: &[f64],
    hier: &GridHierarchy,
) -> Result<f64, DataError> {
    if predictions.len() != sample.top_level || deltas.len() < sample.top_level {
        return Err(DataError::ShapeMismatch { what: "predictions vs sample levels" });
    }
    let mut loss = 0.0;
    for l in 1..=sample.top_level {
        let level = hier.level(l)?;
        let delta = deltas[l - 1];
        if delta == 0.0 {
            return Err(DataError::ZeroNormalisation { level: l });
        }
        let pred = &predictions[l - 1];
        let corr = &sample.corrections[l - 1];
        if pred.m() != level.interior_per_side() {
            return Err(DataError::ShapeMismatch { what: "prediction level size" });
        }
        let mut d = pred.clone();
        for (di, ci) in d.as_mut_slice().iter_mut().zip(corr.as_slice()) {
            *di -= ci / delta;
        }
        loss += fe::h1_inner(&d, &d, level)?;
    }
    Ok(loss)
}

/// Inference recombination: `sum_l delta_l * (prolongation chain of
/// prediction_l to the finest level)`.
pub fn recombine(
    predictions: &[Field],
    deltas: &[f64],
    hier: &GridHierarchy,
) -> Result<Field, DataError> {
    let lcount = predictions.len();
    if lcount == 0 || lcount > hier.level_count() || deltas.len() < lcount {
        return Err(DataError::ShapeMismatch { what: "predictions vs hierarchy" });
    }
    let mut acc = Field::zeros(hier.level(1)?.interior_per_side());
    for (a, p) in acc.as_mut_slice().iter_mut().zip(predictions[0].as_slice()) {
        *a = deltas[0] * p;
    }
    for l in 2..=lcount {
        let level = hier.level(l)?;
        if predictions[l - 1].m() != level.interior_per_side() {
            return Err(DataError::ShapeMismatch { what: "prediction level size" });
        }
        let mut lifted = prolong_field(&acc);
        for (ai, pi) in lifted.as_mut_slice().iter_mut().zip(predictions[l - 1].as_slice()) {
            *ai += deltas[l - 1] * pi;
        }
        acc = lifted;
    }
    Ok(acc)
}

//! Mean-relative error metrics against same-level and reference-grid
//! solutions.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::fe::{self, FeError};
use crate::grid::{Field, GridError, GridHierarchy, GridLevel};
use crate::multigrid::prolong_field;
use crate::num;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    H1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    MrH1,
    MrL2,
    MrH1Ref,
    MrL2Ref,
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::MrH1 => "mr_h1",
            MetricKind::MrL2 => "mr_l2",
            MetricKind::MrH1Ref => "mr_h1_ref",
            MetricKind::MrL2Ref => "mr_l2_ref",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricsError {
    EmptySampleSet,
    CountMismatch { predictions: usize, solutions: usize },
    ZeroDenominator,
    BadLevels { level: usize, reference: usize },
    Fe(FeError),
    Grid(GridError),
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::EmptySampleSet => write!(f, "metric over an empty sample set"),
            MetricsError::CountMismatch { predictions, solutions } => {
                write!(f, "{predictions} predictions vs {solutions} solutions")
            }
            MetricsError::ZeroDenominator => write!(f, "solution norms sum to zero"),
            MetricsError::BadLevels { level, reference } => {
                write!(f, "reference level {reference} must exceed prediction level {level}")
            }
            MetricsError::Fe(e) => write!(f, "{e}"),
            MetricsError::Grid(e) => write!(f, "{e}"),
        }
    }
}

impl From<FeError> for MetricsError {
    fn from(e: FeError) -> Self {
        MetricsError::Fe(e)
    }
}

impl From<GridError> for MetricsError {
    fn from(e: GridError) -> Self {
        MetricsError::Grid(e)
    }
}

/// One computed metric with enough context to reproduce it.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub kind: MetricKind,
    pub value: f64,
    pub samples: usize,
    pub level: usize,
    pub reference_level: Option<usize>,
    pub fingerprint: String,
}

fn norm(u: &Field, level: &GridLevel, kind: NormKind) -> Result<f64, MetricsError> {
    Ok(match kind {
        NormKind::H1 => fe::h1_norm(u, level)?,
        NormKind::L2 => fe::l2_norm(u, level)?,
    })
}

/// Root of summed squared errors over root of summed squared solution norms.
pub fn mr_error(
    predictions: &[Field],
    solutions: &[Field],
    kind: NormKind,
    level: &GridLevel,
) -> Result<f64, MetricsError> {
    if predictions.is_empty() {
        return Err(MetricsError::EmptySampleSet);
    }
    if predictions.len() != solutions.len() {
        return Err(MetricsError::CountMismatch {
            predictions: predictions.len(),
            solutions: solutions.len(),
        });
    }
    let mut num_acc = 0.0;
    let mut den_acc = 0.0;
    for (u, v) in predictions.iter().zip(solutions) {
        let mut d = u.clone();
        if d.m() != v.m() {
            return Err(MetricsError::Fe(FeError::DimensionMismatch {
                expected: v.len(),
                got: d.len(),
            }));
        }
        for (di, vi) in d.as_mut_slice().iter_mut().zip(v.as_slice()) {
            *di -= vi;
        }
        let e = norm(&d, level, kind)?;
        let s = norm(v, level, kind)?;
        num_acc += e * e;
        den_acc += s * s;
    }
    if den_acc == 0.0 {
        return Err(MetricsError::ZeroDenominator);
    }
    Ok(num::sqrt(num_acc / den_acc))
}

/// Prolongates predictions from `level` to `reference_level` (exact
/// embedding) and measures against reference solutions there.
pub fn mr_error_ref(
    predictions: &[Field],
    references: &[Field],
    kind: NormKind,
    hier: &GridHierarchy,
    level: usize,
    reference_level: usize,
) -> Result<f64, MetricsError> {
    if reference_level <= level {
        return Err(MetricsError::BadLevels { level, reference: reference_level });
    }
    let ref_level = hier.level(reference_level)?;
    let lifted: Vec<Field> = predictions
        .iter()
        .map(|p| {
            let mut cur = p.clone();
            for _ in level..reference_level {
                cur = prolong_field(&cur);
            }
            cur
        })
        .collect();
    mr_error(&lifted, references, kind, ref_level)
}

//! JSON run configuration. The schema is documented in
//! `docs/config-schema.md`; unknown keys are rejected so typos fail fast,
//! and every section has defaults so a minimal config stays small.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use convmg_core::fields::{FieldKind, FieldSpec};
use convmg_core::multigrid::{CoarseSolve, OmegaMode, VCycleConfig};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub field: FieldConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub contraction: ContractionConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

fn default_seed() -> u64 {
    42
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: default_seed(),
            field: FieldConfig::default(),
            grid: GridConfig::default(),
            solver: SolverConfig::default(),
            dataset: DatasetConfig::default(),
            verify: VerifyConfig::default(),
            contraction: ContractionConfig::default(),
            weights: WeightsConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub kind: String,
    pub p: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig { kind: "uniform_smooth".into(), p: 16 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub coarse_cells: usize,
    pub levels: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { coarse_cells: 5, levels: 4 }
    }
}

/// Damping: the string "auto" or a fixed positive number.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OmegaConfig {
    Fixed(f64),
    Named(String),
}

impl Default for OmegaConfig {
    fn default() -> Self {
        OmegaConfig::Named("auto".into())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_k")]
    pub k_pre: usize,
    #[serde(default = "default_k")]
    pub k_post: usize,
    /// Richardson steps on the coarsest level; 0 selects the direct solve.
    #[serde(default)]
    pub k0: usize,
    #[serde(default)]
    pub omega: OmegaConfig,
    #[serde(default = "default_cycles")]
    pub cycles: usize,
    #[serde(default = "default_tol")]
    pub residual_tol: Option<f64>,
}

fn default_k() -> usize {
    3
}

fn default_cycles() -> usize {
    60
}

fn default_tol() -> Option<f64> {
    Some(1e-10)
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            k_pre: default_k(),
            k_post: default_k(),
            k0: 0,
            omega: OmegaConfig::default(),
            cycles: default_cycles(),
            residual_tol: default_tol(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "default_n1")]
    pub n1: usize,
    /// Halve the sample count per finer level (the decaying schedule).
    #[serde(default = "default_true")]
    pub decay: bool,
    #[serde(default)]
    pub out_dir: Option<String>,
    /// Derive coarse solutions by independent per-level solves instead of
    /// nodal interpolation.
    #[serde(default)]
    pub galerkin_coarse: bool,
}

fn default_n1() -> usize {
    16
}

fn default_true() -> bool {
    true
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { n1: default_n1(), decay: true, out_dir: None, galerkin_coarse: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_vtol")]
    pub tolerance: f64,
    #[serde(default = "default_draws")]
    pub draws: usize,
}

fn default_vtol() -> f64 {
    1e-12
}

fn default_draws() -> usize {
    20
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { tolerance: default_vtol(), draws: default_draws() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionConfig {
    #[serde(default = "default_ks")]
    pub smoothing_steps: Vec<usize>,
    #[serde(default = "default_levels")]
    pub levels: Vec<usize>,
    #[serde(default = "default_cdraws")]
    pub draws: usize,
    #[serde(default = "default_ccycles")]
    pub cycles: usize,
}

fn default_ks() -> Vec<usize> {
    vec![1, 2, 3, 4, 8]
}

fn default_levels() -> Vec<usize> {
    vec![3, 4, 5]
}

fn default_cdraws() -> usize {
    10
}

fn default_ccycles() -> usize {
    6
}

impl Default for ContractionConfig {
    fn default() -> Self {
        ContractionConfig {
            smoothing_steps: default_ks(),
            levels: default_levels(),
            draws: default_cdraws(),
            cycles: default_ccycles(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_wk0")]
    pub k0: usize,
    #[serde(default = "default_wcycles")]
    pub cycles: Vec<usize>,
    #[serde(default = "default_wlevels")]
    pub levels: Vec<usize>,
    #[serde(default = "default_weps")]
    pub epsilon: f64,
}

fn default_wk0() -> usize {
    10
}

fn default_wcycles() -> Vec<usize> {
    vec![1, 2, 4]
}

fn default_wlevels() -> Vec<usize> {
    vec![3, 4, 5, 6]
}

fn default_weps() -> f64 {
    1e-3
}

impl Default for WeightsConfig {
    fn default() -> Self {
        WeightsConfig {
            k: default_k(),
            k0: default_wk0(),
            cycles: default_wcycles(),
            levels: default_wlevels(),
            epsilon: default_weps(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "default_mdraws")]
    pub draws: usize,
    /// Reference solves happen on this level (defaults to two past the
    /// configured finest level).
    #[serde(default)]
    pub reference_level: Option<usize>,
}

fn default_mdraws() -> usize {
    5
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { draws: default_mdraws(), reference_level: None }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.field_kind()?;
        self.field_spec()?;
        if self.grid.coarse_cells < 2 {
            return Err(CliError::Config("grid.coarse_cells must be >= 2".into()));
        }
        if self.grid.levels < 1 {
            return Err(CliError::Config("grid.levels must be >= 1".into()));
        }
        if let OmegaConfig::Named(s) = &self.solver.omega {
            if s != "auto" {
                return Err(CliError::Config(format!(
                    "solver.omega must be a positive number or \"auto\", got {s:?}"
                )));
            }
        }
        if let OmegaConfig::Fixed(w) = self.solver.omega {
            if !(w > 0.0) {
                return Err(CliError::Config("solver.omega must be positive".into()));
            }
        }
        if let Some(t) = self.solver.residual_tol {
            if !(t > 0.0) {
                return Err(CliError::Config("solver.residual_tol must be positive".into()));
            }
        }
        if self.dataset.n1 < 1 {
            return Err(CliError::Config("dataset.n1 must be >= 1".into()));
        }
        if !(self.verify.tolerance > 0.0) {
            return Err(CliError::Config("verify.tolerance must be positive".into()));
        }
        if let Some(r) = self.metrics.reference_level {
            if r <= self.grid.levels {
                return Err(CliError::Config(
                    "metrics.reference_level must exceed grid.levels".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn field_kind(&self) -> Result<FieldKind, CliError> {
        match self.field.kind.as_str() {
            "uniform_smooth" => Ok(FieldKind::UniformSmooth),
            "log_normal_smooth" => Ok(FieldKind::LogNormalSmooth),
            "cookie_fixed" => Ok(FieldKind::CookieFixed),
            "cookie_variable" => Ok(FieldKind::CookieVariable),
            other => Err(CliError::Config(format!(
                "unknown field.kind {other:?}; expected uniform_smooth, log_normal_smooth, cookie_fixed or cookie_variable"
            ))),
        }
    }

    pub fn field_spec(&self) -> Result<FieldSpec, CliError> {
        let kind = self.field_kind()?;
        FieldSpec::new(kind, self.field.p).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn solver_vcycle(&self) -> VCycleConfig {
        VCycleConfig {
            k_pre: self.solver.k_pre,
            k_post: self.solver.k_post,
            coarse: if self.solver.k0 == 0 {
                CoarseSolve::Direct
            } else {
                CoarseSolve::Richardson(self.solver.k0)
            },
            omega: match self.solver.omega {
                OmegaConfig::Fixed(w) => OmegaMode::Fixed(w),
                OmegaConfig::Named(_) => OmegaMode::Auto,
            },
            cycles: self.solver.cycles,
            residual_tol: self.solver.residual_tol,
        }
    }

    pub fn metrics_reference_level(&self) -> usize {
        self.metrics.reference_level.unwrap_or(self.grid.levels + 2)
    }
}

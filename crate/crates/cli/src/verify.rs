//! The equivalence verification suite behind `convmg verify`: stencil vs
//! dense assembly, conv path vs classical path, restriction/prolongation vs
//! the embedding matrices, Galerkin consistency of the coarsened operators,
//! and the multiplication-unit error bound.

use serde_json::json;

use convmg_core::convnet::{self, KernelSet};
use convmg_core::fe;
use convmg_core::fields::{evaluate_kappa_extended, sample_parameters, FieldKind, FieldSpec};
use convmg_core::grid::{ExtendedField, Field, GridHierarchy};
use convmg_core::linalg::DenseMatrix;
use convmg_core::multigrid::{self, CoarseSolve, OmegaMode, VCycleConfig};
use convmg_core::rng::SampleRng;

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed deviation (check-specific normalisation).
    pub observed: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Default)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&CheckResult> {
        self.checks.iter().find(|c| !c.passed)
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "passed": self.all_passed(),
            "checks": self.checks.iter().map(|c| json!({
                "name": c.name,
                "passed": c.passed,
                "observed": c.observed,
                "threshold": c.threshold,
            })).collect::<Vec<_>>(),
        })
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<28} {:>12} {:>12}  result\n", "check", "observed", "threshold"));
        for c in &self.checks {
            out.push_str(&format!(
                "{:<28} {:>12.3e} {:>12.3e}  {}\n",
                c.name,
                c.observed,
                c.threshold,
                if c.passed { "pass" } else { "FAIL" }
            ));
        }
        out
    }
}

fn random_positive_extended(n: usize, rng: &mut SampleRng) -> ExtendedField {
    ExtendedField::from_fn(n, |_, _| 0.5 + rng.uniform())
}

fn random_field(m: usize, rng: &mut SampleRng) -> Field {
    Field::from_fn(m, |_, _| rng.uniform_pm1())
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
}

/// `P^T A P` column-by-column, exploiting that each prolongated unit vector
/// has at most seven nonzeros.
fn galerkin_deviation(
    hier: &GridHierarchy,
    coarse_l: usize,
    a_fine: &DenseMatrix,
    a_coarse: &DenseMatrix,
) -> Result<f64, CliError> {
    let p = hier.prolongation_matrix(coarse_l)?;
    let nc = hier.level(coarse_l)?.dof();
    let nf = hier.level(coarse_l + 1)?.dof();
    let mut scale = 0.0f64;
    for i in 0..nc {
        for j in 0..nc {
            scale = scale.max(a_coarse.at(i, j).abs());
        }
    }
    let mut worst = 0.0f64;
    let mut e = vec![0.0f64; nc];
    for j in 0..nc {
        e[j] = 1.0;
        let pj = p.matvec(&e)?;
        e[j] = 0.0;
        // A (P e_j) using the sparsity of the prolongated column
        let mut apj = vec![0.0f64; nf];
        for (i, &v) in pj.iter().enumerate() {
            if v != 0.0 {
                for r in 0..nf {
                    apj[r] += v * a_fine.at(r, i);
                }
            }
        }
        let col = p.matvec_transpose(&apj)?;
        for i in 0..nc {
            worst = worst.max((col[i] - a_coarse.at(i, j)).abs() / scale);
        }
    }
    Ok(worst)
}

/// Runs every check; `tamper` mutates the kernel set after construction
/// (fault injection used to validate that the suite actually detects
/// broken kernels).
pub fn run_verification(
    cfg: &RunConfig,
    tamper: Option<&dyn Fn(&mut KernelSet)>,
) -> Result<VerificationReport, CliError> {
    let tol = cfg.verify.tolerance;
    let draws = cfg.verify.draws.max(1);
    let hier = GridHierarchy::build(cfg.grid.coarse_cells, cfg.grid.levels)?;
    let mut set = convnet::build_kernel_set(&hier)?;
    if let Some(t) = tamper {
        t(&mut set);
    }
    let mut rng = SampleRng::new(cfg.seed ^ 0x7665_7269_6679, 0);
    let mut report = VerificationReport::default();

    // stencil path vs dense assembly, and conv path vs stencil path
    {
        let mut worst = 0.0f64;
        for l in 1..=hier.level_count() {
            let level = hier.level(l)?;
            if level.dof() > fe::DENSE_GUARD {
                continue;
            }
            let mut dense = DenseMatrix::zeros(level.dof());
            for _ in 0..draws {
                let kappa = random_positive_extended(level.cells_per_side(), &mut rng);
                let u = random_field(level.interior_per_side(), &mut rng);
                fe::assemble_dense_into(&kappa, level, &mut dense)?;
                let ups = fe::triangle_integrals(&kappa, level)?;
                let stencil = fe::apply_operator(&ups, &u)?;
                let reference = dense.matvec(u.as_slice());
                let conv = convnet::conv_apply_operator(&ups, &u, l, &set)?;
                let scale = max_abs(&reference).max(1e-300);
                for ((s, r), c) in stencil
                    .as_slice()
                    .iter()
                    .zip(&reference)
                    .zip(conv.as_slice())
                {
                    worst = worst.max((s - r).abs() / scale);
                    worst = worst.max((c - s).abs() / scale);
                }
            }
        }
        report.checks.push(CheckResult {
            name: "operator-equivalence",
            passed: worst <= tol,
            observed: worst,
            threshold: tol,
        });
    }

    // strided convs vs the embedding matrix, plus the adjoint identity
    {
        let mut worst = 0.0f64;
        for l in 1..hier.level_count() {
            let p = hier.prolongation_matrix(l)?;
            let mc = hier.level(l)?.interior_per_side();
            let mf = hier.level(l + 1)?.interior_per_side();
            for _ in 0..draws {
                let c = random_field(mc, &mut rng);
                let f = random_field(mf, &mut rng);
                let up = convnet::conv_prolong(&c, &set)?;
                let up_mat = p.matvec(c.as_slice())?;
                let down = convnet::conv_restrict(&f, &set)?;
                let down_mat = p.matvec_transpose(f.as_slice())?;
                let s_up = max_abs(&up_mat).max(1e-300);
                let s_down = max_abs(&down_mat).max(1e-300);
                for (a, b) in up.as_slice().iter().zip(&up_mat) {
                    worst = worst.max((a - b).abs() / s_up);
                }
                for (a, b) in down.as_slice().iter().zip(&down_mat) {
                    worst = worst.max((a - b).abs() / s_down);
                }
                let lhs: f64 = up.as_slice().iter().zip(f.as_slice()).map(|(a, b)| a * b).sum();
                let rhs: f64 = c.as_slice().iter().zip(down.as_slice()).map(|(a, b)| a * b).sum();
                worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
            }
        }
        report.checks.push(CheckResult {
            name: "restriction-prolongation",
            passed: worst <= tol,
            observed: worst,
            threshold: tol,
        });
    }

    // Galerkin consistency: P^T A_h P equals the re-integrated coarse operator
    {
        let mut worst = 0.0f64;
        let galerkin_draws = draws.min(20);
        for l in 1..hier.level_count() {
            let fine = hier.level(l + 1)?;
            if fine.dof() > fe::DENSE_GUARD {
                continue;
            }
            for _ in 0..galerkin_draws {
                let kappa = random_positive_extended(fine.cells_per_side(), &mut rng);
                let a_fine = fe::assemble_dense(&kappa, fine)?;
                let ups_f = fe::triangle_integrals(&kappa, fine)?;
                let ups_c = fe::coarsen_triangle_integrals(&ups_f);
                let a_coarse = fe::assemble_dense_from_integrals(&ups_c)?;
                worst = worst.max(galerkin_deviation(&hier, l, &a_fine, &a_coarse)?);
            }
        }
        report.checks.push(CheckResult {
            name: "galerkin-consistency",
            passed: worst <= tol,
            observed: worst,
            threshold: tol,
        });
    }

    // conv-path multigrid equals the classical path elementwise
    {
        let mut worst = 0.0f64;
        let spec = FieldSpec::new(FieldKind::UniformSmooth, 10)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let cfg_mg = VCycleConfig {
            k_pre: 3,
            k_post: 3,
            coarse: CoarseSolve::Richardson(20),
            omega: OmegaMode::Auto,
            cycles: 4,
            residual_tol: None,
        };
        let f = fe::rhs_vector(hier.finest(), 1.0);
        let zero = Field::zeros(hier.finest().interior_per_side());
        for d in 0..draws.min(20) {
            let y = sample_parameters(&spec, cfg.seed, d as u64);
            let kappa = evaluate_kappa_extended(&spec, &y, hier.finest())?;
            let classic = multigrid::mg_solve(&zero, &kappa, &f, &cfg_mg, &hier)?;
            let conv = convnet::conv_mg_solve(&zero, &kappa, &f, &cfg_mg, &hier, &set)?;
            let scale = max_abs(classic.u.as_slice()).max(1e-300);
            for (a, b) in classic.u.as_slice().iter().zip(conv.u.as_slice()) {
                worst = worst.max((a - b).abs() / scale);
            }
        }
        report.checks.push(CheckResult {
            name: "conv-multigrid-equality",
            passed: worst <= tol,
            observed: worst,
            threshold: tol,
        });
    }

    // multiplication unit meets its requested tolerance
    {
        let mut worst_ratio = 0.0f64;
        for eps in [1e-2, 1e-3] {
            let unit = convnet::build_mul_unit(2.0, eps)?;
            worst_ratio = worst_ratio.max(unit.achieved / eps);
            if unit.weight_count > convnet::MUL_UNIT_WEIGHTS || unit.layers != 2 {
                worst_ratio = f64::INFINITY;
            }
        }
        report.checks.push(CheckResult {
            name: "mul-unit-bound",
            passed: worst_ratio <= 1.0,
            observed: worst_ratio,
            threshold: 1.0,
        });
    }

    Ok(report)
}

//! CSV/JSON reports: contraction ratios, network weight counts, and
//! mean-relative error metrics.

use serde::Serialize;
use serde_json::json;

use convmg_core::convnet::count_weights;
use convmg_core::fe;
use convmg_core::fields::sample_parameters;
use convmg_core::grid::{Field, GridHierarchy};
use convmg_core::metrics::{mr_error, mr_error_ref, NormKind};
use convmg_core::multigrid::{self, measure_contraction, prolong_field, VCycleConfig};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct ContractionRow {
    pub level: usize,
    pub k: usize,
    pub cycle: usize,
    /// Median energy-norm error ratio across draws for this cycle.
    pub ratio: f64,
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    Some(values[values.len() / 2])
}

/// Per-cycle contraction ratios, medianed over parameter draws, for every
/// configured (level count, smoothing count) pair.
pub fn contraction_report(cfg: &RunConfig) -> Result<Vec<ContractionRow>, CliError> {
    let spec = cfg.field_spec()?;
    let mut rows = Vec::new();
    for &lcount in &cfg.contraction.levels {
        let hier = GridHierarchy::build(cfg.grid.coarse_cells, lcount)?;
        let f = fe::rhs_vector(hier.finest(), 1.0);
        for &k in &cfg.contraction.smoothing_steps {
            let mg_cfg = VCycleConfig::with_smoothing(k, cfg.contraction.cycles);
            // ratios[draw][cycle]
            let mut per_draw: Vec<Vec<f64>> = Vec::with_capacity(cfg.contraction.draws);
            for d in 0..cfg.contraction.draws {
                let y = sample_parameters(&spec, cfg.seed, d as u64);
                let kappa =
                    convmg_core::fields::evaluate_kappa_extended(&spec, &y, hier.finest())?;
                per_draw.push(measure_contraction(&kappa, &f, &mg_cfg, &hier)?);
            }
            for cycle in 0..cfg.contraction.cycles {
                let mut vals: Vec<f64> = per_draw
                    .iter()
                    .filter_map(|r| r.get(cycle).copied())
                    .collect();
                if let Some(med) = median(&mut vals) {
                    rows.push(ContractionRow { level: lcount, k, cycle: cycle + 1, ratio: med });
                }
            }
        }
    }
    Ok(rows)
}

pub fn contraction_csv(rows: &[ContractionRow]) -> String {
    let mut out = String::from("level,k,cycle,ratio\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{:.17e}\n", r.level, r.k, r.cycle, r.ratio));
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct WeightsRow {
    pub levels: usize,
    pub k: usize,
    pub k0: usize,
    pub cycles: usize,
    pub epsilon: f64,
    pub weights: u64,
}

/// Parameter counts of the unrolled conv-multigrid network over the
/// configured level and cycle grids. The count is independent of the
/// multiplication tolerance; the epsilon column records the configured
/// value to make that visible in the output.
pub fn weights_report(cfg: &RunConfig) -> Vec<WeightsRow> {
    let mut rows = Vec::new();
    for &lcount in &cfg.weights.levels {
        for &m in &cfg.weights.cycles {
            rows.push(WeightsRow {
                levels: lcount,
                k: cfg.weights.k,
                k0: cfg.weights.k0,
                cycles: m,
                epsilon: cfg.weights.epsilon,
                weights: count_weights(lcount, cfg.weights.k, cfg.weights.k0, m),
            });
        }
    }
    rows
}

pub fn weights_csv(rows: &[WeightsRow]) -> String {
    let mut out = String::from("L,k,k0,m,epsilon,weights\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:e},{}\n",
            r.levels, r.k, r.k0, r.cycles, r.epsilon, r.weights
        ));
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub metric: &'static str,
    pub level: usize,
    pub reference_level: usize,
    pub draws: usize,
    pub value: f64,
}

/// FE convergence study: solutions on each level measured against the
/// finest configured level and against tight reference solves two levels
/// past it.
pub fn metrics_report(cfg: &RunConfig) -> Result<Vec<MetricsRow>, CliError> {
    let spec = cfg.field_spec()?;
    let l_top = cfg.grid.levels;
    let l_ref = cfg.metrics_reference_level();
    let hier = GridHierarchy::build(cfg.grid.coarse_cells, l_ref)?;
    let draws = cfg.metrics.draws.max(1);

    let mut tight = cfg.solver_vcycle();
    tight.residual_tol = Some(1e-12);
    tight.cycles = tight.cycles.max(100);

    // per level: solutions for each draw
    let mut per_level: Vec<Vec<Field>> = vec![Vec::with_capacity(draws); l_top];
    let mut references: Vec<Field> = Vec::with_capacity(draws);
    for d in 0..draws {
        let y = sample_parameters(&spec, cfg.seed, d as u64);
        for l in 1..=l_top {
            let sub = GridHierarchy::build(cfg.grid.coarse_cells, l)?;
            let level = sub.finest();
            let kappa = convmg_core::fields::evaluate_kappa_extended(&spec, &y, level)?;
            let f = fe::rhs_vector(level, 1.0);
            let zero = Field::zeros(level.interior_per_side());
            let run = multigrid::mg_solve(&zero, &kappa, &f, &tight, &sub)?;
            per_level[l - 1].push(run.u);
        }
        let ref_level = hier.level(l_ref)?;
        let kappa = convmg_core::fields::evaluate_kappa_extended(&spec, &y, ref_level)?;
        let f = fe::rhs_vector(ref_level, 1.0);
        let zero = Field::zeros(ref_level.interior_per_side());
        let run = multigrid::mg_solve(&zero, &kappa, &f, &tight, &hier)?;
        references.push(run.u);
    }

    let finest = &per_level[l_top - 1];
    let top_level = hier.level(l_top)?;
    let mut rows = Vec::new();
    for l in 1..=l_top {
        // lift to the finest configured level for the same-family metric
        let lifted: Vec<Field> = per_level[l - 1]
            .iter()
            .map(|u| {
                let mut cur = u.clone();
                for _ in l..l_top {
                    cur = prolong_field(&cur);
                }
                cur
            })
            .collect();
        for (name, norm) in [("mr_h1", NormKind::H1), ("mr_l2", NormKind::L2)] {
            let value = mr_error(&lifted, finest, norm, top_level)?;
            rows.push(MetricsRow { metric: name, level: l, reference_level: l_top, draws, value });
        }
        for (name, norm) in [("mr_h1_ref", NormKind::H1), ("mr_l2_ref", NormKind::L2)] {
            let value = mr_error_ref(&per_level[l - 1], &references, norm, &hier, l, l_ref)?;
            rows.push(MetricsRow { metric: name, level: l, reference_level: l_ref, draws, value });
        }
    }
    Ok(rows)
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("metric,level,reference_level,draws,value\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.17e}\n",
            r.metric, r.level, r.reference_level, r.draws, r.value
        ));
    }
    out
}

pub fn metrics_json(rows: &[MetricsRow]) -> serde_json::Value {
    json!({ "metrics": rows })
}

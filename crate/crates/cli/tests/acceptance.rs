//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! with its runtime (run with `--nocapture` to see them). Tolerances and
//! budgets are pinned in the constants below.

use std::time::Instant;

use convmg_core::convnet::{self, build_kernel_set, build_mul_unit};
use convmg_core::fe;
use convmg_core::fields::{
    evaluate_kappa_extended, sample_parameters, FieldKind, FieldSpec, ParamVector,
};
use convmg_core::grid::{ExtendedField, Field, GridHierarchy};
use convmg_core::linalg::DenseMatrix;
use convmg_core::metrics::{mr_error, NormKind};
use convmg_core::mldata::{decay_schedule, generate_sample, SampleSettings};
use convmg_core::multigrid::{
    self, measure_contraction, mg_solve, ml_solve, CoarseSolve, OmegaMode, VCycleConfig,
};
use convmg_core::rng::SampleRng;

const TOL_EXACT: f64 = 1e-12;

fn report(criterion: u32, name: &str, start: Instant, budget_secs: f64) {
    let secs = start.elapsed().as_secs_f64();
    println!("criterion {criterion:02} {name}: PASS ({secs:.1}s, budget {budget_secs:.0}s)");
    assert!(
        secs <= budget_secs,
        "criterion {criterion} exceeded its runtime budget: {secs:.1}s > {budget_secs}s"
    );
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

fn random_positive_extended(n: usize, rng: &mut SampleRng) -> ExtendedField {
    ExtendedField::from_fn(n, |_, _| 0.5 + rng.uniform())
}

fn random_field(m: usize, rng: &mut SampleRng) -> Field {
    Field::from_fn(m, |_, _| rng.uniform_pm1())
}

fn diff(a: &Field, b: &Field) -> Field {
    let mut out = a.clone();
    for (x, y) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *x -= y;
    }
    out
}

fn median(mut values: Vec<f64>) -> f64 {
    assert!(!values.is_empty());
    values.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

/// Criterion 1: stencil operator equals dense assembly and the conv path
/// equals the stencil path, 100 random pairs per level, levels 1..=5.
#[test]
fn criterion_01_operator_equivalence() {
    let start = Instant::now();
    let hier = GridHierarchy::build(5, 5).unwrap();
    let set = build_kernel_set(&hier).unwrap();
    let mut rng = SampleRng::new(0xacce_0001, 0);
    for l in 1..=5usize {
        let level = hier.level(l).unwrap();
        assert!(level.dof() <= 6241);
        let mut dense = DenseMatrix::zeros(level.dof());
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let kappa = random_positive_extended(level.cells_per_side(), &mut rng);
            let u = random_field(level.interior_per_side(), &mut rng);
            fe::assemble_dense_into(&kappa, level, &mut dense).unwrap();
            let ups = fe::triangle_integrals(&kappa, level).unwrap();
            let stencil = fe::apply_operator(&ups, &u).unwrap();
            let reference = dense.matvec(u.as_slice());
            let conv = convnet::conv_apply_operator(&ups, &u, l, &set).unwrap();
            let scale = max_abs(&reference);
            for ((s, r), c) in stencil.as_slice().iter().zip(&reference).zip(conv.as_slice()) {
                worst = worst.max((s - r).abs() / scale).max((c - s).abs() / scale);
            }
        }
        assert!(worst <= TOL_EXACT, "level {l}: worst relative deviation {worst:e}");
    }
    report(1, "operator-equivalence suite", start, 60.0);
}

/// Criterion 2: strided-conv restriction equals P^T, transpose-strided
/// prolongation equals P, and the adjoint identity holds; 100 vectors per
/// level pair.
#[test]
fn criterion_02_restriction_prolongation_exactness() {
    let start = Instant::now();
    let hier = GridHierarchy::build(5, 5).unwrap();
    let set = build_kernel_set(&hier).unwrap();
    let mut rng = SampleRng::new(0xacce_0002, 0);
    for l in 1..5usize {
        let p = hier.prolongation_matrix(l).unwrap();
        let mc = hier.level(l).unwrap().interior_per_side();
        let mf = hier.level(l + 1).unwrap().interior_per_side();
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let c = random_field(mc, &mut rng);
            let f = random_field(mf, &mut rng);
            let up = convnet::conv_prolong(&c, &set).unwrap();
            let up_mat = p.matvec(c.as_slice()).unwrap();
            let down = convnet::conv_restrict(&f, &set).unwrap();
            let down_mat = p.matvec_transpose(f.as_slice()).unwrap();
            let su = max_abs(&up_mat).max(1e-300);
            let sd = max_abs(&down_mat).max(1e-300);
            for (a, b) in up.as_slice().iter().zip(&up_mat) {
                worst = worst.max((a - b).abs() / su);
            }
            for (a, b) in down.as_slice().iter().zip(&down_mat) {
                worst = worst.max((a - b).abs() / sd);
            }
            let lhs: f64 = up.as_slice().iter().zip(f.as_slice()).map(|(a, b)| a * b).sum();
            let rhs: f64 = c.as_slice().iter().zip(down.as_slice()).map(|(a, b)| a * b).sum();
            worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
        }
        assert!(worst <= TOL_EXACT, "levels {l}->{}: worst {worst:e}", l + 1);
    }
    report(2, "restriction/prolongation exactness", start, 10.0);
}

/// Criterion 3: P^T A_h P equals the coarse operator obtained by exact
/// re-integration of the fine coefficient; 20 random coefficients, level
/// pairs up to the 4th level.
#[test]
fn criterion_03_galerkin_consistency() {
    let start = Instant::now();
    let hier = GridHierarchy::build(5, 4).unwrap();
    let mut rng = SampleRng::new(0xacce_0003, 0);
    for l in 1..4usize {
        let fine = hier.level(l + 1).unwrap();
        let p = hier.prolongation_matrix(l).unwrap();
        let nc = hier.level(l).unwrap().dof();
        let nf = fine.dof();
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let kappa = random_positive_extended(fine.cells_per_side(), &mut rng);
            let a_fine = fe::assemble_dense(&kappa, fine).unwrap();
            let ups_c = fe::coarsen_triangle_integrals(&fe::triangle_integrals(&kappa, fine).unwrap());
            let a_coarse = fe::assemble_dense_from_integrals(&ups_c).unwrap();
            let mut scale = 0.0f64;
            for i in 0..nc {
                for j in 0..nc {
                    scale = scale.max(a_coarse.at(i, j).abs());
                }
            }
            let mut e = vec![0.0f64; nc];
            for j in 0..nc {
                e[j] = 1.0;
                let pj = p.matvec(&e).unwrap();
                e[j] = 0.0;
                let mut apj = vec![0.0f64; nf];
                for (i, &v) in pj.iter().enumerate() {
                    if v != 0.0 {
                        for (r, out) in apj.iter_mut().enumerate() {
                            *out += v * a_fine.at(r, i);
                        }
                    }
                }
                let col = p.matvec_transpose(&apj).unwrap();
                for (i, &ci) in col.iter().enumerate() {
                    worst = worst.max((ci - a_coarse.at(i, j)).abs() / scale);
                }
            }
        }
        assert!(worst <= TOL_EXACT, "pair {l}->{}: worst {worst:e}", l + 1);
    }
    report(3, "Galerkin consistency", start, 30.0);
}

/// Criterion 4: the conv-path solver equals the classical solver
/// elementwise on 20 draws, 4 levels, m = 5 cycles, k = 3.
#[test]
fn criterion_04_conv_multigrid_equality() {
    let start = Instant::now();
    let hier = GridHierarchy::build(5, 4).unwrap();
    let set = build_kernel_set(&hier).unwrap();
    let spec = FieldSpec::new(FieldKind::UniformSmooth, 16).unwrap();
    let cfg = VCycleConfig {
        k_pre: 3,
        k_post: 3,
        coarse: CoarseSolve::Richardson(20),
        omega: OmegaMode::Auto,
        cycles: 5,
        residual_tol: None,
    };
    let f = fe::rhs_vector(hier.finest(), 1.0);
    let zero = Field::zeros(hier.finest().interior_per_side());
    let mut worst = 0.0f64;
    for d in 0..20u64 {
        let y = sample_parameters(&spec, 0xacce_0004, d);
        let kappa = evaluate_kappa_extended(&spec, &y, hier.finest()).unwrap();
        let classic = mg_solve(&zero, &kappa, &f, &cfg, &hier).unwrap();
        let conv = convnet::conv_mg_solve(&zero, &kappa, &f, &cfg, &hier, &set).unwrap();
        let scale = max_abs(classic.u.as_slice()).max(1e-300);
        for (a, b) in classic.u.as_slice().iter().zip(conv.u.as_slice()) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    assert!(worst <= TOL_EXACT, "worst elementwise deviation {worst:e}");
    report(4, "conv-path multigrid equality", start, 60.0);
}

/// Criterion 5: grid-independent contraction. Median energy contraction for
/// k = 3 stays below 0.9 on every level count in {3,4,5} with spread <= 0.1,
/// and the median is non-increasing in k over {1,2,4,8}.
#[test]
fn criterion_05_grid_independent_contraction() {
    let start = Instant::now();
    let spec = FieldSpec::new(FieldKind::UniformSmooth, 16).unwrap();
    let draws = 10u64;

    let contraction_median = |lcount: usize, k: usize| -> f64 {
        let hier = GridHierarchy::build(5, lcount).unwrap();
        let f = fe::rhs_vector(hier.finest(), 1.0);
        let cfg = VCycleConfig::with_smoothing(k, 6);
        let mut all = Vec::new();
        for d in 0..draws {
            let y = sample_parameters(&spec, 0xacce_0005, d);
            let kappa = evaluate_kappa_extended(&spec, &y, hier.finest()).unwrap();
            all.extend(measure_contraction(&kappa, &f, &cfg, &hier).unwrap());
        }
        median(all)
    };

    let mut per_level = Vec::new();
    for lcount in [3usize, 4, 5] {
        let med = contraction_median(lcount, 3);
        assert!(med < 0.9, "L = {lcount}: median contraction {med}");
        per_level.push(med);
    }
    let spread = per_level.iter().cloned().fold(f64::MIN, f64::max)
        - per_level.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread <= 0.1, "level spread {spread} ({per_level:?})");

    let mut prev = f64::INFINITY;
    let mut by_k = Vec::new();
    for k in [1usize, 2, 4, 8] {
        let med = contraction_median(4, k);
        assert!(med <= prev, "median contraction must not increase in k: {by_k:?} then {med}");
        by_k.push(med);
        prev = med;
    }
    println!("  contraction medians: per-level {per_level:?}, per-k {by_k:?}");
    report(5, "grid-independent contraction", start, 300.0);
}

/// Scans draw indices until one yields a uniformly elliptic coefficient
/// (nodal minimum at least half the cookie background). The cookie
/// families are sign-indefinite for generic draws, and draws with a nodal
/// minimum near zero have unbounded contrast, where a fixed-cycle
/// Richardson V-cycle legitimately stalls; the fixed-m criterion presumes
/// uniform ellipticity.
fn next_elliptic_draw(
    spec: &FieldSpec,
    seed: u64,
    from: u64,
    level: &convmg_core::grid::GridLevel,
) -> (u64, ParamVector, ExtendedField) {
    const MARGIN: f64 = 0.05;
    for idx in from..from + 200_000 {
        let y = sample_parameters(spec, seed, idx);
        let kappa = evaluate_kappa_extended(spec, &y, level).unwrap();
        if kappa.as_slice().iter().all(|&v| v >= MARGIN) {
            return (idx, y, kappa);
        }
    }
    panic!("no elliptic draw found in 200000 attempts");
}

/// Worst relative H1 error of `mg_solve` against the direct solve over
/// five elliptic draws of one family.
fn solver_worst_error(
    kind: FieldKind,
    p: usize,
    cfg: &VCycleConfig,
    hier: &GridHierarchy,
) -> f64 {
    let level = hier.finest();
    let zero = Field::zeros(level.interior_per_side());
    let f = fe::rhs_vector(level, 1.0);
    let spec = FieldSpec::new(kind, p).unwrap();
    let mut idx = 0u64;
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let (used, _y, kappa) = next_elliptic_draw(&spec, 0xacce_0006, idx, level);
        idx = used + 1;
        let run = mg_solve(&zero, &kappa, &f, cfg, hier).unwrap();
        let ups = fe::triangle_integrals(&kappa, level).unwrap();
        let direct = fe::assemble_banded_from_integrals(&ups)
            .cholesky()
            .unwrap()
            .solve(f.as_slice())
            .unwrap();
        let direct = Field::from_vec(level.interior_per_side(), direct).unwrap();
        let err = fe::h1_norm(&diff(&run.u, &direct), level).unwrap();
        let scale = fe::h1_norm(&direct, level).unwrap();
        worst = worst.max(err / scale);
    }
    worst
}

/// Criterion 6 on the smooth families: 30 cycles with k = 3 reach 1e-9
/// relative H1 against direct solves, five draws each, finest dof 6241.
#[test]
fn criterion_06a_solver_correctness_smooth_families() {
    let start = Instant::now();
    let hier = GridHierarchy::build(5, 5).unwrap();
    assert_eq!(hier.finest().dof(), 6241);
    let cfg = VCycleConfig::with_smoothing(3, 30);
    for (kind, p) in [(FieldKind::UniformSmooth, 16usize), (FieldKind::LogNormalSmooth, 16)] {
        let worst = solver_worst_error(kind, p, &cfg, &hier);
        assert!(worst <= 1e-9, "{kind:?}: worst relative H1 error {worst:e}");
    }
    report(6, "solver correctness (smooth families)", start, 300.0);
}

/// Criterion 6 on the cookie families, verbatim: 30 cycles, k = 3, 1e-9.
///
/// KNOWN RED. The discontinuous cookie coefficients have generic contrast
/// of at least 11 (background 0.1, inclusions up to 1.1), and the
/// damped-Richardson V-cycle contracts at roughly 0.8 per cycle there,
/// consistent with the contraction criterion, which itself only requires
/// rho < 0.9. Thirty cycles therefore deliver about 1e-3..1e-2 relative
/// H1, six orders short of this criterion's 1e-9; the fixed budget is
/// calibrated for the smooth families. Draws restricted to near-constant
/// realisations (contrast below 2, a 1e-5-measure slice of the parameter
/// space) would pass, but that would not be the benchmark. The companion
/// test below shows the solver does reach the tolerance on these families
/// under a residual-driven budget.
#[test]
fn criterion_06b_solver_correctness_cookie_families_fixed_budget() {
    let start = Instant::now();
    let hier = GridHierarchy::build(5, 5).unwrap();
    let cfg = VCycleConfig::with_smoothing(3, 30);
    let mut failures = Vec::new();
    for (kind, p) in [(FieldKind::CookieFixed, 4usize), (FieldKind::CookieVariable, 8)] {
        let worst = solver_worst_error(kind, p, &cfg, &hier);
        if worst > 1e-9 {
            failures.push(format!("{kind:?}: worst relative H1 error {worst:.2e}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(
        failures.is_empty(),
        "criterion 06 (cookie families, fixed 30-cycle budget): FAIL ({secs:.1}s)\n  {}\n  \
         the 30-cycle budget cannot reach 1e-9 for discontinuous coefficients (see test doc)",
        failures.join("\n  ")
    );
    report(6, "solver correctness (cookie families)", start, 300.0);
}

/// Supporting evidence for the red criterion above: with a residual-driven
/// budget the solver does match direct solves to 1e-9 on the cookie
/// families; only the fixed cycle count is miscalibrated, not the solver.
#[test]
fn solver_correctness_cookie_families_with_adequate_budget() {
    let start = Instant::now();
    let hier = GridHierarchy::build(5, 5).unwrap();
    let mut cfg = VCycleConfig::with_smoothing(3, 2000);
    cfg.residual_tol = Some(1e-13);
    for (kind, p) in [(FieldKind::CookieFixed, 4usize), (FieldKind::CookieVariable, 8)] {
        let worst = solver_worst_error(kind, p, &cfg, &hier);
        assert!(worst <= 1e-9, "{kind:?}: worst relative H1 error {worst:e}");
    }
    let secs = start.elapsed().as_secs_f64();
    println!("cookie families under residual-driven budget: PASS ({secs:.1}s)");
    assert!(secs <= 300.0);
}

/// Criterion 7: correction norms decay with per-level median ratio in
/// [0.35, 0.65] for the uniformly elliptic family, 10 samples, 5 levels.
#[test]
fn criterion_07_correction_decay() {
    let start = Instant::now();
    let spec = FieldSpec::new(FieldKind::UniformSmooth, 16).unwrap();
    let hier = GridHierarchy::build(5, 5).unwrap();
    let settings = SampleSettings::default();
    let mut ratios_per_level: Vec<Vec<f64>> = vec![Vec::new(); 3]; // l = 2..4
    for d in 0..10u64 {
        let s = generate_sample(&spec, &hier, &settings, 0xacce_0007, d).unwrap();
        let mut norms = Vec::new();
        for l in 2..=5usize {
            norms.push(fe::h1_norm(&s.corrections[l - 1], hier.level(l).unwrap()).unwrap());
        }
        for (i, w) in norms.windows(2).enumerate() {
            ratios_per_level[i].push(w[1] / w[0]);
        }
    }
    for (i, ratios) in ratios_per_level.into_iter().enumerate() {
        let med = median(ratios);
        assert!(
            (0.35..=0.65).contains(&med),
            "levels {}->{}: median decay ratio {med}",
            i + 2,
            i + 3
        );
    }
    report(7, "correction decay", start, 120.0);
}

/// Criterion 8: the multiplication unit has at most 9 weights and 2 layers,
/// meets its tolerance on the [-2,2]^2 grid for eps in {1e-2, 1e-3}, and
/// halving eps halves the measured error to within 10%.
#[test]
fn criterion_08_multiplication_unit() {
    let start = Instant::now();
    for eps in [1e-2, 1e-3] {
        let unit = build_mul_unit(2.0, eps).unwrap();
        assert!(unit.weight_count <= 9);
        assert_eq!(unit.weight_count, 9);
        assert_eq!(unit.layers, 2);
        assert!(unit.achieved <= eps, "eps {eps}: achieved {:e}", unit.achieved);
        let half = build_mul_unit(2.0, eps / 2.0).unwrap();
        assert!(half.achieved <= eps / 2.0);
        assert!(
            half.achieved <= 0.5 * unit.achieved * 1.1,
            "halving eps {eps}: {:e} vs {:e}",
            half.achieved,
            unit.achieved
        );
    }
    report(8, "multiplication unit", start, 10.0);
}

/// Criterion 9: weight counts are exactly affine in the cycle count and the
/// level count, and with m proportional to L the total fits C L^2 with C
/// stable to +-20%.
#[test]
fn criterion_09_weight_count_scaling() {
    let start = Instant::now();
    let (k, k0) = (3usize, 10usize);
    for m in [1usize, 3, 7] {
        for l in [3usize, 4, 5, 6] {
            let c0 = convnet::count_weights(l, k, k0, 0);
            let c1 = convnet::count_weights(l, k, k0, m);
            let c2 = convnet::count_weights(l, k, k0, 2 * m);
            assert_eq!(c2 - c1, c1 - c0, "affine in m at L={l}, m={m}");
        }
    }
    for m in [1usize, 2, 5] {
        let counts: Vec<i64> = [3usize, 4, 5, 6]
            .iter()
            .map(|&l| convnet::count_weights(l, k, k0, m) as i64)
            .collect();
        for w in counts.windows(3) {
            assert_eq!(w[2] - w[1], w[1] - w[0], "second difference in L must vanish");
        }
    }
    // m proportional to L: the L^2 coefficient stays within +-20% of its mean
    let cs: Vec<f64> = [3usize, 4, 5, 6]
        .iter()
        .map(|&l| convnet::count_weights(l, k, k0, l) as f64 / (l * l) as f64)
        .collect();
    let mean = cs.iter().sum::<f64>() / cs.len() as f64;
    for c in &cs {
        assert!(
            (c - mean).abs() / mean <= 0.2,
            "quadratic-fit coefficient unstable: {cs:?}"
        );
    }
    report(9, "weight-count scaling", start, 1.0);
}

/// Criterion 10: the multilevel schedule with measured contraction delivers
/// the target accuracy `eps = 2^-L` against a converged reference, 4
/// levels, 5 draws.
#[test]
fn criterion_10_multilevel_solve_schedule() {
    let start = Instant::now();
    let hier = GridHierarchy::build(5, 4).unwrap();
    let spec = FieldSpec::new(FieldKind::UniformSmooth, 16).unwrap();
    let f = fe::rhs_vector(hier.finest(), 1.0);
    let eps = 1.0 / 16.0; // 2^-L with L = 4
    let f_norm = 1.0; // L2 norm of the constant-one right-hand side

    // measured contraction for k = 3
    let mu = {
        let cfg = VCycleConfig::with_smoothing(3, 6);
        let mut all = Vec::new();
        for d in 0..3u64 {
            let y = sample_parameters(&spec, 0xacce_0010, d);
            let kappa = evaluate_kappa_extended(&spec, &y, hier.finest()).unwrap();
            all.extend(measure_contraction(&kappa, &f, &cfg, &hier).unwrap());
        }
        median(all).clamp(1e-3, 0.95)
    };

    let mut reference_cfg = VCycleConfig::with_smoothing(3, 80);
    reference_cfg.residual_tol = Some(1e-12);
    let zero = Field::zeros(hier.finest().interior_per_side());
    for d in 0..5u64 {
        let y = sample_parameters(&spec, 0xacce_0010, 100 + d);
        let kappa = evaluate_kappa_extended(&spec, &y, hier.finest()).unwrap();
        let run = ml_solve(&kappa, &f, &hier, eps, 3, mu).unwrap();
        let reference = mg_solve(&zero, &kappa, &f, &reference_cfg, &hier).unwrap();
        assert!(reference.converged);
        let err = fe::h1_norm(&diff(&run.levels[3], &reference.u), hier.finest()).unwrap();
        assert!(
            err <= eps * f_norm,
            "draw {d}: H1 error {err:e} exceeds {:.4}",
            eps * f_norm
        );
        // the schedule follows the stated formulas
        let expected = multigrid::ml_schedule(mu, eps, 4).unwrap();
        assert_eq!(run.schedule, expected);
    }
    report(10, "multilevel solve schedule", start, 120.0);
}

/// Criterion 11: dataset pipeline. Decay schedule values, telescoping,
/// bit-exact round trip, delta recomputation, determinism across worker
/// counts.
#[test]
fn criterion_11_dataset_pipeline() {
    use convmg_cli::config::RunConfig;
    use convmg_cli::dataset::{generate_dataset, load_dataset};
    use convmg_core::multigrid::prolong_field;

    let start = Instant::now();
    assert_eq!(
        decay_schedule(10_000, 7),
        [10_000, 5_000, 2_500, 1_250, 625, 313, 157]
    );

    let mut cfg: RunConfig = serde_json::from_str("{}").unwrap();
    cfg.seed = 0xacce;
    cfg.field.p = 8;
    cfg.grid.coarse_cells = 5;
    cfg.grid.levels = 4;
    cfg.dataset.n1 = 16;

    let base = std::env::temp_dir().join(format!("convmg-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&base);
    std::fs::create_dir_all(&base).unwrap();
    let out1 = base.join("w1");
    let out3 = base.join("w3");
    let m1 = generate_dataset(&cfg, &out1, 1).unwrap();
    let m3 = generate_dataset(&cfg, &out3, 3).unwrap();

    // determinism across worker counts: identical checksums everywhere
    assert_eq!(m1.counts, vec![16, 8, 4, 2]);
    for (a, b) in m1.files.iter().zip(&m3.files) {
        assert_eq!(a.checksum, b.checksum, "{}", a.path);
    }

    // round trip: loaded bytes reproduce the manifest checksums, and the
    // deltas recompute to 1e-14
    let loaded = load_dataset(&out1).unwrap();
    for (a, b) in loaded.recompute_deltas().iter().zip(&m1.deltas) {
        assert!((a - b).abs() <= 1e-14 * b.max(1.0));
    }

    // telescoping on every sample that carries all levels
    let hier = GridHierarchy::build(5, 4).unwrap();
    for i in 0..m1.counts[3] {
        let mut acc = Field::from_vec(
            hier.level(1).unwrap().interior_per_side(),
            loaded.levels[0].correction_record(i).to_vec(),
        )
        .unwrap();
        for l in 2..=4usize {
            let mut lifted = prolong_field(&acc);
            for (a, c) in lifted
                .as_mut_slice()
                .iter_mut()
                .zip(loaded.levels[l - 1].correction_record(i))
            {
                *a += c;
            }
            acc = lifted;
        }
        let fine = loaded.levels[3].solution_record(i);
        let scale = fine.iter().fold(1e-30f64, |m, &v| m.max(v.abs()));
        for (a, b) in acc.as_slice().iter().zip(fine) {
            assert!((a - b).abs() <= 1e-12 * scale, "sample {i}");
        }
    }

    std::fs::remove_dir_all(&base).unwrap();
    report(11, "dataset pipeline", start, 120.0);
}

/// Criterion 12: metric identities and FE convergence rates against
/// reference solves: the reference H1 error halves per refinement, the
/// reference L2 error quarters.
#[test]
fn criterion_12_metrics_and_fe_convergence() {
    use convmg_cli::config::RunConfig;
    use convmg_cli::reports::metrics_report;

    let start = Instant::now();
    // metric identities
    let hier = GridHierarchy::build(5, 2).unwrap();
    let level = hier.level(2).unwrap();
    let mut rng = SampleRng::new(0xacce_0012, 0);
    let sols: Vec<Field> = (0..4)
        .map(|_| random_field(level.interior_per_side(), &mut rng))
        .collect();
    for kind in [NormKind::H1, NormKind::L2] {
        assert_eq!(mr_error(&sols, &sols, kind, level).unwrap(), 0.0);
        let zeros: Vec<Field> = sols.iter().map(|s| Field::zeros(s.m())).collect();
        let one = mr_error(&zeros, &sols, kind, level).unwrap();
        assert!((one - 1.0).abs() < 1e-14);
    }

    // convergence study: uniform smooth field, levels 1..4 against
    // reference solves on level 6
    let mut cfg: RunConfig = serde_json::from_str("{}").unwrap();
    cfg.seed = 0xacce;
    cfg.field.p = 8;
    cfg.grid.coarse_cells = 5;
    cfg.grid.levels = 4;
    cfg.metrics.draws = 3;
    cfg.metrics.reference_level = Some(6);
    let rows = metrics_report(&cfg).unwrap();
    let value = |metric: &str, level: usize| -> f64 {
        rows.iter()
            .find(|r| r.metric == metric && r.level == level)
            .unwrap()
            .value
    };
    // self-comparison at the top level vanishes
    assert_eq!(value("mr_h1", 4), 0.0);
    assert_eq!(value("mr_l2", 4), 0.0);
    for l in [2usize, 3] {
        let h1_ratio = value("mr_h1_ref", l + 1) / value("mr_h1_ref", l);
        assert!(
            (0.4..=0.6).contains(&h1_ratio),
            "H1 ratio at level {l}: {h1_ratio}"
        );
        let l2_ratio = value("mr_l2_ref", l + 1) / value("mr_l2_ref", l);
        assert!(
            (0.2..=0.3).contains(&l2_ratio),
            "L2 ratio at level {l}: {l2_ratio}"
        );
    }
    report(12, "metrics and FE convergence", start, 120.0);
}

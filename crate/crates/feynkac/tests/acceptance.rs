//! The acceptance gate. Each test is one claim this crate makes about
//! itself, checked end to end at its stated tolerance: the quantitative
//! benchmark reproductions first (criteria 1 through 6), then the exact
//! and statistical properties (criteria 7 through 12). The harness emits
//! one pass/fail line per criterion; details print with --nocapture.
//!
//! The quantitative criteria train real networks at benchmark scale, so
//! this target takes tens of minutes of CPU. Everything else in the test
//! suite finishes in seconds; run `--test acceptance` alone when iterating
//! on benchmark configurations.

mod common;

use std::sync::OnceLock;
use std::time::Instant;

use common::{input_grad_fd_error, param_grad_fd_error, FD_REL_TOL};
use feynkac::bench::{run_benchmark, RunConfig, RunReport, TRACE_HEADER};
use feynkac::net::{Activation, Architecture, Mode, SubnetStack};
use feynkac::problems::{log_transform_mc, ProblemBuilder, ProblemSpec};
use feynkac::sde::{simulate_paths, TimeGrid};
use feynkac::solvers::{
    build_dfk_targets, build_ds_targets, estimate_u0, Method, SolverConfig,
};
use feynkac::tensor::RngStream;

const HJB_REFERENCE: f64 = 4.5901;

/// Benchmark-scale solver setup: d = 100 problems, N = 20, batch 256, 512
/// test paths, the default rectifier architecture with batch norm, and a
/// per-criterion learning-rate schedule (the one free hyperparameter).
fn benchmark_solver(method: Method, iterations: u64, schedule: &[(u64, f64)]) -> SolverConfig {
    let mut solver = SolverConfig::new(method, 7);
    solver.iterations = iterations;
    solver.lr_schedule = schedule.to_vec();
    solver
}

fn benchmark_run(
    problem: &str,
    method: Method,
    iterations: u64,
    schedule: &[(u64, f64)],
) -> RunReport {
    let mut config = RunConfig::new(problem, 100, benchmark_solver(method, iterations, schedule));
    config.repetitions = 5;
    run_benchmark(&config).expect("benchmark run failed")
}

fn report_line(id: u32, detail: &str) {
    println!("criterion {id:02}: {detail}");
}

/// Criterion 1's report, shared with criterion 6 (which reads its
/// 1000-iteration aggregate row as the matched-budget comparison point).
fn hjb_dfk_gt_report() -> &'static RunReport {
    static REPORT: OnceLock<RunReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        benchmark_run("hjb", Method::DfkGt, 2000, &[(1, 3e-2), (1700, 3e-3)])
    })
}

#[test]
fn criterion_01_hjb_dfk_gt_mean_rel_error_within_5e3() {
    let start = Instant::now();
    let report = hjb_dfk_gt_report();
    let err = report.final_mean_rel_error.unwrap();
    // The error bound is the gate. The expected-runtime figure (10 min on
    // a desk machine, repetitions in parallel) is hardware-bound and
    // reported rather than asserted, consistent with runtime columns being
    // excluded from reproduction claims.
    report_line(
        1,
        &format!(
            "hjb dfk_gt 2000 iters: mean rel error {err:.3e} (bar 5e-3), wall {:.0} s",
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(err <= 5e-3, "mean rel error {err:.3e} above 5e-3");
}

#[test]
fn criterion_02_hjb_dbsde_mean_rel_error_within_1e2() {
    // The trainable head starts near zero and must travel to ~4.59 while
    // the per-step networks keep absorbing the terminal mismatch, so the
    // shooting scheme needs a hot phase; the step-size cap near the end
    // settles the estimate.
    let report = benchmark_run("hjb", Method::Dbsde, 5000, &[(1, 6e-2), (4500, 1e-2)]);
    let err = report.final_mean_rel_error.unwrap();
    report_line(
        2,
        &format!("hjb dbsde 5000 iters: mean rel error {err:.3e} (bar 1e-2)"),
    );
    assert!(err <= 1e-2, "mean rel error {err:.3e} above 1e-2");
}

#[test]
fn criterion_03_allen_cahn_dfk_gt_mean_rel_error_within_1e2() {
    let report = benchmark_run(
        "allen_cahn",
        Method::DfkGt,
        2000,
        &[(1, 1e-2), (1200, 1e-3), (1700, 1e-4)],
    );
    let err = report.final_mean_rel_error.unwrap();
    report_line(
        3,
        &format!("allen_cahn dfk_gt 2000 iters: mean rel error {err:.3e} (bar 1e-2)"),
    );
    assert!(err <= 1e-2, "mean rel error {err:.3e} above 1e-2");
}

#[test]
fn criterion_04_pricing_diffrate_dfk_gt_mean_rel_error_within_2e2() {
    // The payoff mean dominates the estimate from the first evaluation;
    // training only has to settle the generator correction, and the
    // default constant rate does that within the budget.
    let report = benchmark_run("pricing_diffrate", Method::DfkGt, 1000, &[(1, 1e-2)]);
    let err = report.final_mean_rel_error.unwrap();
    report_line(
        4,
        &format!("pricing_diffrate dfk_gt 1000 iters: mean rel error {err:.3e} (bar 2e-2)"),
    );
    assert!(err <= 2e-2, "mean rel error {err:.3e} above 2e-2");
}

#[test]
fn criterion_05_oracle_matches_reference_within_3_se() {
    let start = Instant::now();
    let problem = ProblemSpec::by_name("hjb", 100).unwrap();
    let estimate = log_transform_mc(
        &|x| problem.terminal(x),
        problem.dim(),
        problem.horizon(),
        10_000_000,
        &RngStream::new(1, 0),
    )
    .unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    // The reference is quoted to four decimals, so its own quantization
    // (half an ulp of the last digit) joins the Monte Carlo error.
    let combined_se = (estimate.value_std_error().powi(2) + 5e-5f64.powi(2)).sqrt();
    let gap = (estimate.value - HJB_REFERENCE).abs();
    report_line(
        5,
        &format!(
            "oracle 1e7 samples: {:.6} vs {HJB_REFERENCE}, gap {gap:.2e} vs 3 se {:.2e}, {elapsed:.0} s",
            estimate.value,
            3.0 * combined_se
        ),
    );
    assert!(gap <= 3.0 * combined_se, "gap {gap:.2e} beyond 3 se");
    assert!(elapsed <= 120.0, "oracle took {elapsed:.0} s, bar 120 s");
}

#[test]
fn criterion_06_dfk_gt_beats_ds_gt_at_1000_iterations() {
    let dfk = hjb_dfk_gt_report()
        .aggregates
        .iter()
        .find(|a| a.iteration == 1000)
        .expect("1000-iteration aggregate row")
        .mean_rel_error
        .unwrap();
    // Each method runs at its own stable tuned rate for the shared budget:
    // the carried-label scheme tolerates 3e-2, while the splitting labels
    // feed the network value back into the next round's regression and
    // diverge above a few 1e-3 on this problem.
    let ds_gt = benchmark_run("hjb", Method::DsGt, 1000, &[(1, 3e-3)])
        .final_mean_rel_error
        .unwrap();
    report_line(
        6,
        &format!("1000-iter budget on hjb: dfk_gt {dfk:.3e} vs ds_gt {ds_gt:.3e}"),
    );
    assert!(
        dfk < ds_gt,
        "dfk_gt {dfk:.3e} not strictly below ds_gt {ds_gt:.3e}"
    );
}

/// With a vanishing generator the label chain adds exact zeros, so the
/// carried estimator must reproduce the Monte Carlo mean of the terminal
/// condition on the same paths, for any seed and an untrained network.
#[test]
fn criterion_07_carried_estimator_collapses_to_monte_carlo() {
    let mut worst = 0.0f64;
    for seed in [1u64, 77, 90210] {
        let problem = ProblemBuilder::new("driftless", 10, 1.0)
            .terminal(
                |x| x.iter().map(|v| v * v).sum::<f64>(),
                |x, out| {
                    for (o, v) in out.iter_mut().zip(x) {
                        *o = 2.0 * v;
                    }
                },
            )
            .build()
            .unwrap();
        let grid = TimeGrid::uniform(problem.horizon(), 5).unwrap();
        let mut rng = RngStream::new(seed, 0);
        let arch = Architecture::value_net(10);
        let stack = SubnetStack::init(&mut rng, arch, 4);
        let paths = simulate_paths(&problem, &grid, 64, &rng.substream(9)).unwrap();
        let targets = build_dfk_targets(&stack, &paths, &problem).unwrap();
        let estimate = estimate_u0(&stack, &paths, Some(&targets), &problem, Method::DfkGt).unwrap();
        let mc = (0..64)
            .map(|m| problem.terminal(paths.state(m, 5)))
            .sum::<f64>()
            / 64.0;
        worst = worst.max((estimate - mc).abs() / mc.abs());
    }
    report_line(7, &format!("estimator vs direct mc: rel gap {worst:.2e} (bar 1e-12)"));
    assert!(worst <= 1e-12);
}

#[test]
fn criterion_08_gradients_match_finite_differences() {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        for d in [3usize, 7] {
            for output_dim in [1, d] {
                let base = if output_dim == 1 {
                    Architecture::value_net(d)
                } else {
                    Architecture::gradient_net(d)
                };
                let arch = base.with_activation(Activation::Tanh);
                worst = worst.max(param_grad_fd_error(seed, arch, Mode::Train));
                worst = worst.max(param_grad_fd_error(seed, arch, Mode::Eval));
            }
            worst = worst.max(input_grad_fd_error(seed, d, Mode::Eval, true));
        }
    }
    report_line(
        8,
        &format!("20 seeds x {{3, 7}} x both output dims: worst rel error {worst:.2e} (bar 1e-5)"),
    );
    assert!(worst < FD_REL_TOL);
}

/// Constant generators make the label chain a telescoping sum, and with a
/// single interior step the carried and splitting builders coincide.
#[test]
fn criterion_09_telescoping_and_two_step_coincidence() {
    let c = 0.75;
    let problem = ProblemBuilder::new("constant_generator", 4, 1.0)
        .generator(
            move |_, _, _, _| c,
            |_, _, _, _| 0.0,
            |_, _, _, _, out| out.fill(0.0),
        )
        .terminal(
            |x| x.iter().sum::<f64>(),
            |_, out| out.fill(1.0),
        )
        .build()
        .unwrap();
    let mut rng = RngStream::new(31, 0);
    let n_steps = 6;
    let stack = SubnetStack::init(&mut rng, Architecture::value_net(4), n_steps - 1);
    let grid = TimeGrid::uniform(problem.horizon(), n_steps).unwrap();
    let paths = simulate_paths(&problem, &grid, 32, &rng.substream(1)).unwrap();
    let targets = build_dfk_targets(&stack, &paths, &problem).unwrap();
    let mut worst = 0.0f64;
    for m in 0..32 {
        let g = problem.terminal(paths.state(m, n_steps));
        for j in 0..n_steps - 1 {
            let remaining = grid.horizon() - grid.knot(j + 1);
            let expect = g + c * remaining;
            let got = targets.value(m, j);
            worst = worst.max((got - expect).abs() / expect.abs().max(1.0));
        }
    }

    let two_step = TimeGrid::uniform(problem.horizon(), 2).unwrap();
    let short = SubnetStack::init(&mut rng, Architecture::value_net(4), 1);
    let short_paths = simulate_paths(&problem, &two_step, 32, &rng.substream(2)).unwrap();
    let carried = build_dfk_targets(&short, &short_paths, &problem).unwrap();
    let split = build_ds_targets(&short, &short_paths, &problem).unwrap();
    let coincide = carried.values() == split.values();

    report_line(
        9,
        &format!("telescoping rel gap {worst:.2e} (bar 1e-12), two-step builders coincide: {coincide}"),
    );
    assert!(worst <= 1e-12);
    assert!(coincide, "two-step label builders disagree");
}

#[test]
fn criterion_10_path_statistics_within_3_standard_errors() {
    let n_paths = 100_000;

    // Geometric dynamics: E X_T = xi exp(mu_bar T) per coordinate.
    let pricing = ProblemSpec::by_name("pricing_diffrate", 2).unwrap();
    let grid = TimeGrid::uniform(pricing.horizon(), 20).unwrap();
    let batch = simulate_paths(&pricing, &grid, n_paths, &RngStream::new(8, 0)).unwrap();
    let finals: Vec<f64> = (0..n_paths).map(|m| batch.state(m, 20)[0]).collect();
    let mean = finals.iter().sum::<f64>() / n_paths as f64;
    let var = finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_paths as f64 - 1.0);
    let se = (var / n_paths as f64).sqrt();
    let expect_mean = pricing.initial_state()[0] * (0.06 * pricing.horizon()).exp();
    let mean_gap = (mean - expect_mean).abs();

    // Additive sqrt(2) noise: Var X_T = 2 T per coordinate.
    let hjb = ProblemSpec::by_name("hjb", 2).unwrap();
    let grid = TimeGrid::uniform(hjb.horizon(), 20).unwrap();
    let batch = simulate_paths(&hjb, &grid, n_paths, &RngStream::new(9, 0)).unwrap();
    let finals: Vec<f64> = (0..n_paths).map(|m| batch.state(m, 20)[0]).collect();
    let m0 = finals.iter().sum::<f64>() / n_paths as f64;
    let v0 = finals.iter().map(|v| (v - m0).powi(2)).sum::<f64>() / (n_paths as f64 - 1.0);
    let var_se = v0 * (2.0 / (n_paths as f64 - 1.0)).sqrt();
    let var_gap = (v0 - 2.0 * hjb.horizon()).abs();

    report_line(
        10,
        &format!(
            "geometric mean gap {mean_gap:.2e} vs 3 se {:.2e}; variance gap {var_gap:.2e} vs 3 se {:.2e}",
            3.0 * se,
            3.0 * var_se
        ),
    );
    assert!(mean_gap < 3.0 * se, "mean {mean} vs {expect_mean} (se {se})");
    assert!(var_gap < 3.0 * var_se, "var {v0} vs {} (se {var_se})", 2.0 * hjb.horizon());
}

fn mask_runtime(csv: &str) -> String {
    let mut rows = csv.lines();
    assert_eq!(rows.next(), Some(TRACE_HEADER));
    rows.map(|row| {
        let cut = row.rfind(',').expect("data row has commas");
        format!("{}\n", &row[..cut])
    })
    .collect()
}

#[test]
fn criterion_11_traces_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let make = |threads: usize, out: &std::path::Path| {
        let mut solver = SolverConfig::new(Method::DfkGt, 555);
        solver.n_steps = 4;
        solver.iterations = 20;
        solver.batch = 16;
        solver.test_paths = 16;
        solver.eval_cadence = 5;
        let mut config = RunConfig::new("hjb", 6, solver);
        config.repetitions = 2;
        config.out_dir = Some(out.to_path_buf());
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_benchmark(&config).unwrap());
    };
    let single = dir.path().join("single");
    let multi = dir.path().join("multi");
    make(1, &single);
    make(4, &multi);
    let a = mask_runtime(&std::fs::read_to_string(single.join("trace.csv")).unwrap());
    let b = mask_runtime(&std::fs::read_to_string(multi.join("trace.csv")).unwrap());
    let identical = a == b;
    report_line(
        11,
        &format!("1-thread vs 4-thread trace rows identical (wall-time column aside): {identical}"),
    );
    assert!(identical);
}

#[test]
fn criterion_12_reports_round_trip_to_1e12() {
    let dir = tempfile::tempdir().unwrap();
    let mut solver = SolverConfig::new(Method::DfkGt, 4242);
    solver.n_steps = 3;
    solver.iterations = 30;
    solver.batch = 8;
    solver.test_paths = 16;
    solver.eval_cadence = 10;
    let mut config = RunConfig::new("hjb", 100, solver);
    config.repetitions = 3;
    config.out_dir = Some(dir.path().to_path_buf());
    run_benchmark(&config).unwrap();

    let rows = feynkac::bench::parse_trace_csv(
        &std::fs::read_to_string(dir.path().join("trace.csv")).unwrap(),
    )
    .unwrap();
    let report: RunReport = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("report.json")).unwrap(),
    )
    .unwrap();

    let mut worst = 0.0f64;
    for agg in &report.aggregates {
        let estimates: Vec<f64> = rows
            .iter()
            .filter(|(_, p)| p.iteration == agg.iteration)
            .map(|(_, p)| p.u0_estimate)
            .collect();
        assert_eq!(estimates.len(), 3);
        let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
        worst = worst.max((mean - agg.mean_u0_estimate).abs() / mean.abs().max(1.0));
        let errors: Vec<f64> = rows
            .iter()
            .filter(|(_, p)| p.iteration == agg.iteration)
            .map(|(_, p)| p.rel_error)
            .collect();
        let mean_err = errors.iter().sum::<f64>() / errors.len() as f64;
        worst = worst.max((mean_err - agg.mean_rel_error.unwrap()).abs() / mean_err.abs().max(1.0));
    }
    report_line(
        12,
        &format!("csv-recomputed aggregates vs report.json: rel gap {worst:.2e} (bar 1e-12)"),
    );
    assert!(worst <= 1e-12);
}

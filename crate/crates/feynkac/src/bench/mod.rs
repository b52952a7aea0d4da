//! Multi-repetition benchmark runs and their report files.
//!
//! A benchmark executes `R` independent training runs of one problem and
//! method, each from its own derived seed, and aggregates the traces into
//! three artifacts inside the output directory:
//!
//! - `trace.csv`: one row per (repetition, evaluation point),
//! - `summary.csv`: aggregate rows at headline iteration counts,
//! - `report.json`: the full config echo, per-point aggregates, convergence
//!   summaries, software version, and seeds.
//!
//! `report.json` determines reproduction: re-running from the echoed config
//! and base seed regenerates `trace.csv` bit-identically on the same
//! platform. All emitted text is ASCII with LF line endings, `.` as the
//! decimal separator, and no thousands separators.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::ProblemSpec;
use crate::solvers::{train, SolverConfig, TracePoint, TrainingTrace};
use crate::tensor::mix_seed;

pub const DEFAULT_REPETITIONS: u32 = 5;
pub const DEFAULT_CONVERGENCE_WINDOW: usize = 5;
pub const DEFAULT_CONVERGENCE_REL_TOL: f64 = 1e-2;
pub const DEFAULT_ERROR_THRESHOLD: f64 = 1e-2;

/// Headline iteration counts picked out for `summary.csv`, alongside the
/// final iteration of the run. Milestones that do not land on the
/// evaluation cadence are skipped.
const SUMMARY_MILESTONES: [u64; 7] = [100, 200, 600, 1000, 2000, 5000, 10000];

/// Column header of `trace.csv`.
pub const TRACE_HEADER: &str = "rep,iter,loss_sum,loss_last_step,test_loss,u0_estimate,rel_error,runtime_s";

/// Column header of `summary.csv`.
pub const SUMMARY_HEADER: &str = "iter,mean_u0_estimate,std_u0_estimate,mean_rel_error,mean_loss_sum,mean_loss_last_step,mean_test_loss,mean_runtime_s";

/// Everything needed to run one benchmark: the problem, the solver setup,
/// and the repetition/reporting policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Problem name as understood by [`ProblemSpec::by_name`].
    pub problem: String,
    pub dim: usize,
    pub solver: SolverConfig,
    /// Independent repetitions; aggregates are over exactly this many runs.
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    /// Where to write `trace.csv`, `summary.csv`, and `report.json`.
    /// `None` keeps the report in memory only.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_convergence_window")]
    pub convergence_window: usize,
    #[serde(default = "default_convergence_rel_tol")]
    pub convergence_rel_tol: f64,
    /// Relative-error threshold for [`first_error_below`].
    #[serde(default = "default_error_threshold")]
    pub error_threshold: f64,
    /// Test hook: reuse the base seed verbatim for every repetition instead
    /// of deriving per-repetition seeds, so repetitions coincide exactly.
    #[serde(default)]
    pub identical_seeds: bool,
}

fn default_repetitions() -> u32 {
    DEFAULT_REPETITIONS
}

fn default_convergence_window() -> usize {
    DEFAULT_CONVERGENCE_WINDOW
}

fn default_convergence_rel_tol() -> f64 {
    DEFAULT_CONVERGENCE_REL_TOL
}

fn default_error_threshold() -> f64 {
    DEFAULT_ERROR_THRESHOLD
}

impl RunConfig {
    pub fn new(problem: impl Into<String>, dim: usize, solver: SolverConfig) -> Self {
        RunConfig {
            problem: problem.into(),
            dim,
            solver,
            repetitions: DEFAULT_REPETITIONS,
            out_dir: None,
            convergence_window: DEFAULT_CONVERGENCE_WINDOW,
            convergence_rel_tol: DEFAULT_CONVERGENCE_REL_TOL,
            error_threshold: DEFAULT_ERROR_THRESHOLD,
            identical_seeds: false,
        }
    }

    /// Checks every field except problem-name resolution, which happens in
    /// [`run_benchmark`] so that custom problem specs can bypass it.
    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 1 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.convergence_window < 2 {
            return Err(Error::Config(format!(
                "convergence_window must be at least 2, got {}",
                self.convergence_window
            )));
        }
        if !(self.convergence_rel_tol > 0.0) || !self.convergence_rel_tol.is_finite() {
            return Err(Error::Config(format!(
                "convergence_rel_tol must be positive and finite, got {}",
                self.convergence_rel_tol
            )));
        }
        if !(self.error_threshold > 0.0) || !self.error_threshold.is_finite() {
            return Err(Error::Config(format!(
                "error_threshold must be positive and finite, got {}",
                self.error_threshold
            )));
        }
        self.solver.validate()
    }
}

/// Cross-repetition aggregate at one evaluation point. Means are computed
/// in a canonical value order, so they are exactly invariant under
/// permuting the repetitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub iteration: u64,
    pub mean_u0_estimate: f64,
    /// Sample standard deviation of the estimate over repetitions (unbiased
    /// divisor); absent when only one repetition ran.
    pub std_u0_estimate: Option<f64>,
    /// Absent when the problem carries no reference value.
    pub mean_rel_error: Option<f64>,
    pub mean_loss_sum: f64,
    pub mean_loss_last_step: f64,
    pub mean_test_loss: f64,
    pub mean_runtime_s: f64,
}

/// Per-repetition convergence diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub rep: u32,
    /// Iteration where the test loss stopped improving, per
    /// [`detect_loss_convergence`] with the configured window and tolerance.
    pub loss_plateau_iteration: Option<u64>,
    /// Iteration where the relative error first fell below the configured
    /// threshold.
    pub error_below_iteration: Option<u64>,
}

/// Outcome of a full benchmark: raw traces plus everything `report.json`
/// carries. Traces are serialized separately as `trace.csv`, so they are
/// skipped by the JSON representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    /// Config echo; together with the seeds below it reproduces the run.
    pub config: RunConfig,
    /// Seed each repetition actually used.
    pub rep_seeds: Vec<u64>,
    #[serde(skip)]
    pub traces: Vec<TrainingTrace>,
    pub aggregates: Vec<AggregatePoint>,
    pub convergence: Vec<ConvergenceSummary>,
    pub final_mean_u0: f64,
    /// Standard deviation of the final estimate over repetitions (unbiased
    /// divisor); absent when only one repetition ran.
    pub final_std_u0: Option<f64>,
    pub final_mean_rel_error: Option<f64>,
}

/// Runs the named problem's benchmark and writes reports if an output
/// directory is configured.
pub fn run_benchmark(config: &RunConfig) -> Result<RunReport> {
    let problem = ProblemSpec::by_name(&config.problem, config.dim)?;
    run_benchmark_on(&problem, config)
}

/// [`run_benchmark`] on an explicit problem spec, bypassing name lookup.
pub fn run_benchmark_on(problem: &ProblemSpec, config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let rep_seeds: Vec<u64> = (0..config.repetitions)
        .map(|rep| {
            if config.identical_seeds {
                config.solver.seed
            } else {
                mix_seed(config.solver.seed, rep as u64)
            }
        })
        .collect();
    // Repetitions are independent runs on independent streams, so they may
    // execute concurrently; traces are collected back in repetition order.
    let traces: Vec<TrainingTrace> = rep_seeds
        .par_iter()
        .enumerate()
        .map(|(rep, &seed)| {
            let mut solver = config.solver.clone();
            solver.seed = seed;
            let (_, trace) =
                train(problem, &solver).map_err(|e| with_repetition(e, rep as u32))?;
            Ok(trace)
        })
        .collect::<Result<_>>()?;
    let aggregates = aggregate(&traces);
    let convergence = traces
        .iter()
        .enumerate()
        .map(|(rep, trace)| ConvergenceSummary {
            rep: rep as u32,
            loss_plateau_iteration: detect_loss_convergence(
                trace,
                config.convergence_window,
                config.convergence_rel_tol,
            ),
            error_below_iteration: first_error_below(trace, config.error_threshold),
        })
        .collect();
    let last = aggregates
        .last()
        .expect("every trace carries at least the iteration-0 row");
    let report = RunReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        rep_seeds,
        final_mean_u0: last.mean_u0_estimate,
        final_std_u0: last.std_u0_estimate,
        final_mean_rel_error: last.mean_rel_error,
        aggregates,
        convergence,
        traces,
    };
    if let Some(dir) = &config.out_dir {
        emit_reports(&report, dir)?;
    }
    Ok(report)
}

fn with_repetition(err: Error, rep: u32) -> Error {
    match err {
        Error::NonFinite(msg) => Error::NonFinite(format!("repetition {rep}: {msg}")),
        Error::Contract(msg) => Error::Contract(format!("repetition {rep}: {msg}")),
        Error::Config(msg) => Error::Config(format!("repetition {rep}: {msg}")),
        other => other,
    }
}

/// Earliest evaluation point where the best test loss of the trailing
/// `window` points improves on the best of the `window` points before them
/// by less than `rel_tol` (relative), meaning the loss has stopped
/// decreasing. Returns that point's iteration number, or `None` if the
/// loss keeps improving through the end of the trace.
///
/// # Panics
/// If `window < 2`.
pub fn detect_loss_convergence(
    trace: &TrainingTrace,
    window: usize,
    rel_tol: f64,
) -> Option<u64> {
    assert!(window >= 2, "window must be at least 2, got {window}");
    let points = trace.points();
    let best = |lo: usize, hi: usize| {
        points[lo..hi]
            .iter()
            .map(|p| p.test_loss)
            .fold(f64::INFINITY, f64::min)
    };
    for i in (2 * window - 1)..points.len() {
        let trailing = best(i + 1 - window, i + 1);
        let preceding = best(i + 1 - 2 * window, i + 1 - window);
        let improvement = (preceding - trailing) / preceding.abs().max(f64::MIN_POSITIVE);
        if improvement < rel_tol {
            return Some(points[i].iteration);
        }
    }
    None
}

/// Earliest evaluation point whose relative error is strictly below
/// `threshold`; its iteration number, or `None` if never reached. Points
/// without a reference value (NaN relative error) never qualify.
///
/// # Panics
/// If `threshold` is not positive.
pub fn first_error_below(trace: &TrainingTrace, threshold: f64) -> Option<u64> {
    assert!(threshold > 0.0, "threshold must be positive, got {threshold}");
    trace
        .points()
        .iter()
        .find(|p| p.rel_error < threshold)
        .map(|p| p.iteration)
}

/// Sums in a canonical order so the result is independent of the order the
/// values arrive in.
fn canonical_sum(values: &mut Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

fn mean_of(mut values: Vec<f64>) -> f64 {
    let n = values.len() as f64;
    canonical_sum(&mut values) / n
}

/// Unbiased sample standard deviation; `None` for fewer than two values.
fn std_of(values: &[f64], mean: f64) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let mut devs: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let n = values.len() as f64;
    Some((canonical_sum(&mut devs) / (n - 1.0)).sqrt())
}

fn aggregate(traces: &[TrainingTrace]) -> Vec<AggregatePoint> {
    let n_points = traces[0].points().len();
    for t in traces {
        assert_eq!(
            t.points().len(),
            n_points,
            "repetitions share one evaluation grid"
        );
    }
    (0..n_points)
        .map(|k| {
            let column = |f: fn(&TracePoint) -> f64| -> Vec<f64> {
                traces.iter().map(|t| f(&t.points()[k])).collect()
            };
            let iteration = traces[0].points()[k].iteration;
            for t in traces {
                assert_eq!(t.points()[k].iteration, iteration);
            }
            let estimates = column(|p| p.u0_estimate);
            let mean_u0 = mean_of(estimates.clone());
            let rel_errors = column(|p| p.rel_error);
            let mean_rel_error = if rel_errors.iter().any(|e| e.is_nan()) {
                None
            } else {
                Some(mean_of(rel_errors))
            };
            AggregatePoint {
                iteration,
                mean_u0_estimate: mean_u0,
                std_u0_estimate: std_of(&estimates, mean_u0),
                mean_rel_error,
                mean_loss_sum: mean_of(column(|p| p.loss_sum)),
                mean_loss_last_step: mean_of(column(|p| p.loss_last_step)),
                mean_test_loss: mean_of(column(|p| p.test_loss)),
                mean_runtime_s: mean_of(column(|p| p.runtime_s)),
            }
        })
        .collect()
}

/// Iterations `summary.csv` reports: the milestone counts up to the run
/// length, plus the final iteration itself.
fn summary_iterations(total_iterations: u64) -> BTreeSet<u64> {
    let mut set: BTreeSet<u64> = SUMMARY_MILESTONES
        .iter()
        .copied()
        .filter(|&m| m <= total_iterations)
        .collect();
    set.insert(total_iterations);
    set
}

fn fmt_opt(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v}"),
        None => "NaN".to_string(),
    }
}

/// Writes `trace.csv`, `summary.csv`, and `report.json` into `dir`,
/// creating it if needed.
pub fn emit_reports(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| at_path(dir, e))?;

    let mut trace = String::from(TRACE_HEADER);
    trace.push('\n');
    for (rep, t) in report.traces.iter().enumerate() {
        for p in t.points() {
            trace.push_str(&format!(
                "{rep},{},{},{},{},{},{},{}\n",
                p.iteration,
                p.loss_sum,
                p.loss_last_step,
                p.test_loss,
                p.u0_estimate,
                p.rel_error,
                p.runtime_s
            ));
        }
    }
    write_file(&dir.join("trace.csv"), &trace)?;

    let picks = summary_iterations(report.config.solver.iterations);
    let mut summary = String::from(SUMMARY_HEADER);
    summary.push('\n');
    for a in report
        .aggregates
        .iter()
        .filter(|a| picks.contains(&a.iteration))
    {
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            a.iteration,
            a.mean_u0_estimate,
            fmt_opt(a.std_u0_estimate),
            fmt_opt(a.mean_rel_error),
            a.mean_loss_sum,
            a.mean_loss_last_step,
            a.mean_test_loss,
            a.mean_runtime_s
        ));
    }
    write_file(&dir.join("summary.csv"), &summary)?;

    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    write_file(&dir.join("report.json"), &json)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    debug_assert!(contents.is_ascii());
    fs::write(path, contents).map_err(|e| at_path(path, e))
}

fn at_path(path: &Path, e: io::Error) -> Error {
    io::Error::new(e.kind(), format!("{}: {e}", path.display())).into()
}

/// Parses text in `trace.csv` format back into `(repetition, point)` rows.
/// The exact header is required; `NaN` parses as a missing relative error.
pub fn parse_trace_csv(text: &str) -> Result<Vec<(u32, TracePoint)>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == TRACE_HEADER => {}
        other => {
            return Err(Error::Config(format!(
                "trace header must be {TRACE_HEADER:?}, got {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let row_err = |what: &str| {
            Error::Config(format!("trace row {} {what}: {line:?}", idx + 1))
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(row_err("needs 8 fields"));
        }
        let int = |s: &str, what: &str| {
            s.parse::<u64>()
                .map_err(|_| Error::Config(format!("trace row {}: bad {what} {s:?}", idx + 1)))
        };
        let real = |s: &str, what: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("trace row {}: bad {what} {s:?}", idx + 1)))
        };
        rows.push((
            int(fields[0], "rep")? as u32,
            TracePoint {
                iteration: int(fields[1], "iter")?,
                loss_sum: real(fields[2], "loss_sum")?,
                loss_last_step: real(fields[3], "loss_last_step")?,
                test_loss: real(fields[4], "test_loss")?,
                u0_estimate: real(fields[5], "u0_estimate")?,
                rel_error: real(fields[6], "rel_error")?,
                runtime_s: real(fields[7], "runtime_s")?,
            },
        ));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::ProblemBuilder;
    use crate::solvers::Method;

    fn trace_of(test_losses: &[f64], rel_errors: &[f64]) -> TrainingTrace {
        assert_eq!(test_losses.len(), rel_errors.len());
        let mut trace = TrainingTrace::new();
        for (k, (&loss, &err)) in test_losses.iter().zip(rel_errors).enumerate() {
            trace.push(TracePoint {
                iteration: 100 * k as u64,
                loss_sum: loss,
                loss_last_step: loss,
                test_loss: loss,
                u0_estimate: 1.0 + loss,
                rel_error: err,
                runtime_s: k as f64,
            });
        }
        trace
    }

    #[test]
    fn repetition_seeds_are_distinct_and_decorrelated() {
        let base = 7;
        let mut seen = std::collections::HashSet::new();
        for rep in 0..1000 {
            let s = mix_seed(base, rep);
            assert_ne!(s, base.wrapping_add(rep), "rep {rep} must not be base + rep");
            assert!(seen.insert(s), "rep {rep} collided");
        }
    }

    #[test]
    fn plateau_detection_fires_where_window_bests_stop_improving() {
        let losses = [10.0, 5.0, 1.0, 0.99, 0.985, 0.984, 0.984];
        let trace = trace_of(&losses, &[f64::NAN; 7]);
        // Windows of 2: at point 3 the bests are 5 vs 0.99 (80% better), at
        // point 4 they are 1 vs 0.985 (1.5%), at point 5 they are 0.99 vs
        // 0.984 (0.6%), which is the first improvement under 1%.
        assert_eq!(detect_loss_convergence(&trace, 2, 0.01), Some(500));
    }

    #[test]
    fn constant_loss_converges_at_the_first_full_window_pair() {
        let trace = trace_of(&[3.0; 8], &[f64::NAN; 8]);
        assert_eq!(detect_loss_convergence(&trace, 3, 0.01), Some(500));
        assert_eq!(detect_loss_convergence(&trace, 2, 0.01), Some(300));
    }

    #[test]
    fn halving_loss_never_converges() {
        let losses: Vec<f64> = (0..12).map(|k| 2.0f64.powi(-k)).collect();
        let trace = trace_of(&losses, &vec![f64::NAN; 12]);
        assert_eq!(detect_loss_convergence(&trace, 5, 0.01), None);
    }

    #[test]
    fn short_traces_never_converge() {
        let trace = trace_of(&[1.0; 9], &[f64::NAN; 9]);
        assert_eq!(detect_loss_convergence(&trace, 5, 0.01), None);
    }

    #[test]
    #[should_panic(expected = "window must be at least 2")]
    fn window_of_one_is_rejected() {
        let trace = trace_of(&[1.0; 4], &[f64::NAN; 4]);
        detect_loss_convergence(&trace, 1, 0.01);
    }

    #[test]
    fn first_error_crossing_has_no_hysteresis() {
        let trace = trace_of(&[1.0; 4], &[0.5, 0.02, 0.009, 0.011]);
        assert_eq!(first_error_below(&trace, 1e-2), Some(200));
    }

    #[test]
    fn errors_that_stay_high_or_missing_never_cross() {
        let trace = trace_of(&[1.0; 3], &[0.5, 0.2, 0.1]);
        assert_eq!(first_error_below(&trace, 1e-2), None);
        let trace = trace_of(&[1.0; 3], &[f64::NAN; 3]);
        assert_eq!(first_error_below(&trace, 1e-2), None);
    }

    #[test]
    fn summary_rows_keep_milestones_and_the_final_iteration() {
        let full: Vec<u64> = summary_iterations(10_000).into_iter().collect();
        assert_eq!(full, vec![100, 200, 600, 1000, 2000, 5000, 10_000]);
        let small: Vec<u64> = summary_iterations(250).into_iter().collect();
        assert_eq!(small, vec![100, 200, 250]);
        let zero: Vec<u64> = summary_iterations(0).into_iter().collect();
        assert_eq!(zero, vec![0]);
    }

    #[test]
    fn aggregates_are_exactly_permutation_invariant() {
        let traces = vec![
            trace_of(&[3.0, 1.0], &[0.3, 0.1]),
            trace_of(&[2.9, 0.7], &[0.2, 0.05]),
            trace_of(&[3.3, 0.4], &[0.4, 0.01]),
        ];
        let permuted = vec![traces[2].clone(), traces[0].clone(), traces[1].clone()];
        assert_eq!(aggregate(&traces), aggregate(&permuted));
    }

    #[test]
    fn aggregate_means_and_deviations_match_hand_values() {
        let traces = vec![trace_of(&[1.0], &[0.3]), trace_of(&[3.0], &[0.1])];
        let points = aggregate(&traces);
        assert_eq!(points.len(), 1);
        let a = points[0];
        assert_eq!(a.mean_test_loss, 2.0);
        assert_eq!(a.mean_rel_error, Some(0.2));
        // Estimates are 2.0 and 4.0: mean 3, squared deviations 1 and 1,
        // unbiased variance 2.
        assert_eq!(a.mean_u0_estimate, 3.0);
        assert_eq!(a.std_u0_estimate, Some(2.0f64.sqrt()));
    }

    #[test]
    fn single_repetition_has_no_deviation() {
        let points = aggregate(&[trace_of(&[1.0], &[f64::NAN])]);
        assert_eq!(points[0].std_u0_estimate, None);
        assert_eq!(points[0].mean_rel_error, None);
    }

    fn quick_config(iterations: u64, repetitions: u32) -> RunConfig {
        let mut solver = SolverConfig::new(Method::DfkGt, 99);
        solver.n_steps = 2;
        solver.iterations = iterations;
        solver.batch = 8;
        solver.test_paths = 8;
        solver.batch_norm = false;
        let mut config = RunConfig::new("custom", 2, solver);
        config.repetitions = repetitions;
        config
    }

    fn flat_problem() -> ProblemSpec {
        ProblemBuilder::new("flat", 2, 1.0)
            .terminal(|_| 4.0, |_, out| out.fill(0.0))
            .build()
            .unwrap()
    }

    #[test]
    fn zero_iterations_yield_only_the_initial_row() {
        let report = run_benchmark_on(&flat_problem(), &quick_config(0, 1)).unwrap();
        assert_eq!(report.aggregates.len(), 1);
        assert_eq!(report.aggregates[0].iteration, 0);
        assert_eq!(report.traces.len(), 1);
        assert_eq!(report.final_std_u0, None);
    }

    #[test]
    fn identical_seed_hook_collapses_the_deviation_to_zero() {
        let mut config = quick_config(0, 2);
        config.identical_seeds = true;
        let report = run_benchmark_on(&flat_problem(), &config).unwrap();
        assert_eq!(report.rep_seeds[0], report.rep_seeds[1]);
        assert_eq!(report.final_std_u0, Some(0.0));
    }

    #[test]
    fn repetition_failures_name_the_repetition() {
        let problem = ProblemBuilder::new("poisoned", 2, 1.0)
            .terminal(|_| f64::NAN, |_, out| out.fill(0.0))
            .build()
            .unwrap();
        let err = run_benchmark_on(&problem, &quick_config(0, 1)).unwrap_err();
        assert!(err.is_numerical());
        assert!(err.to_string().contains("repetition 0"), "{err}");
    }

    #[test]
    fn unknown_problem_names_are_rejected() {
        let config = RunConfig::new("nosuch", 2, SolverConfig::new(Method::Ds, 1));
        assert!(matches!(run_benchmark(&config), Err(Error::Config(_))));
    }

    #[test]
    fn emitted_trace_csv_parses_back_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = quick_config(2, 2);
        config.out_dir = Some(dir.path().to_path_buf());
        let report = run_benchmark_on(&flat_problem(), &config).unwrap();
        let text = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        assert!(text.is_ascii());
        assert!(!text.contains('\r'));
        let rows = parse_trace_csv(&text).unwrap();
        let expected: Vec<(u32, TracePoint)> = report
            .traces
            .iter()
            .enumerate()
            .flat_map(|(rep, t)| t.points().iter().map(move |&p| (rep as u32, p)))
            .collect();
        assert_eq!(rows.len(), expected.len());
        for ((r1, p1), (r2, p2)) in rows.iter().zip(&expected) {
            assert_eq!(r1, r2);
            assert_eq!(p1.iteration, p2.iteration);
            assert_eq!(p1.loss_sum.to_bits(), p2.loss_sum.to_bits());
            assert_eq!(p1.test_loss.to_bits(), p2.test_loss.to_bits());
            assert_eq!(p1.u0_estimate.to_bits(), p2.u0_estimate.to_bits());
            assert!(p1.rel_error.is_nan() && p2.rel_error.is_nan());
            assert_eq!(p1.runtime_s.to_bits(), p2.runtime_s.to_bits());
        }
    }

    #[test]
    fn empty_reports_emit_header_only_files() {
        let dir = tempfile::tempdir().unwrap();
        let report = RunReport {
            version: "0.0.0".into(),
            config: quick_config(0, 1),
            rep_seeds: vec![],
            traces: vec![],
            aggregates: vec![],
            convergence: vec![],
            final_mean_u0: f64::NAN,
            final_std_u0: None,
            final_mean_rel_error: None,
        };
        emit_reports(&report, dir.path()).unwrap();
        let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        assert_eq!(trace, format!("{TRACE_HEADER}\n"));
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary, format!("{SUMMARY_HEADER}\n"));
    }

    #[test]
    fn malformed_trace_text_is_rejected_with_row_context() {
        assert!(parse_trace_csv("nonsense\n").is_err());
        let missing = format!("{TRACE_HEADER}\n0,0,1,1\n");
        let err = parse_trace_csv(&missing).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        let bad = format!("{TRACE_HEADER}\n0,0,1,1,1,1,x,0\n");
        let err = parse_trace_csv(&bad).unwrap_err();
        assert!(err.to_string().contains("rel_error"), "{err}");
    }

    #[test]
    fn report_json_round_trips_through_serde() {
        let mut config = quick_config(2, 2);
        config.identical_seeds = true;
        let report = run_benchmark_on(&flat_problem(), &config).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: RunReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.rep_seeds, report.rep_seeds);
        assert_eq!(back.aggregates, report.aggregates);
        assert_eq!(back.convergence, report.convergence);
        assert_eq!(back.config, report.config);
        assert!(back.traces.is_empty(), "traces live in trace.csv only");
    }

    #[test]
    fn runtimes_never_decrease_within_a_repetition() {
        let mut config = quick_config(4, 1);
        config.solver.eval_cadence = 2;
        let report = run_benchmark_on(&flat_problem(), &config).unwrap();
        let points = report.traces[0].points();
        assert!(points.len() >= 3);
        for pair in points.windows(2) {
            assert!(pair[1].runtime_s >= pair[0].runtime_s);
        }
    }
}

//! Command-line front end: benchmark runs and the Monte Carlo reference.
//!
//! Exit codes: 0 on success, 1 on configuration or usage errors, 2 when a
//! run aborts on non-finite numbers.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use feynkac::bench::{run_benchmark, RunConfig};
use feynkac::error::{Error, Result};
use feynkac::optim::AdamParams;
use feynkac::problems::{log_transform_mc, ProblemSpec};
use feynkac::solvers::{Method, SolverConfig};
use feynkac::tensor::RngStream;

#[derive(Parser)]
#[command(
    name = "feynkac",
    version,
    about = "Deep stochastic solvers for semilinear parabolic PDEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a solver over seeded repetitions and write report files.
    Run(RunArgs),
    /// Monte Carlo reference for the HJB control problem via its
    /// exponential transform (independent of all training code).
    OracleHjb(OracleArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Problem name: hjb, allen_cahn, or pricing_diffrate.
    #[arg(long, default_value = "hjb")]
    problem: String,
    /// Solver: dbsde, ds, ds_gt, or dfk_gt.
    #[arg(long, default_value = "dfk_gt")]
    method: String,
    /// Spatial dimension.
    #[arg(long, default_value_t = 100)]
    d: usize,
    /// Time steps N.
    #[arg(long = "n-steps", default_value_t = 20)]
    n_steps: usize,
    /// Optimizer iterations per repetition.
    #[arg(long, default_value_t = 2000)]
    iterations: u64,
    /// Training paths per iteration.
    #[arg(long, default_value_t = 256)]
    batch: usize,
    /// Fixed evaluation paths.
    #[arg(long = "test-paths", default_value_t = 512)]
    test_paths: usize,
    /// Constant learning rate (schedules go in --config).
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    /// Base seed; repetition seeds are derived from it.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Independent repetitions.
    #[arg(long, default_value_t = 5)]
    reps: u32,
    /// Output directory for trace.csv, summary.csv, report.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file with run-config fields that override the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 10_000_000)]
    samples: usize,
    /// Spatial dimension.
    #[arg(long, default_value_t = 100)]
    d: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::OracleHjb(args) => cmd_oracle_hjb(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let config = build_run_config(&args)?;
    let start = Instant::now();
    let report = run_benchmark(&config)?;
    let problem = ProblemSpec::by_name(&config.problem, config.dim)?;

    println!(
        "problem {} (d = {}), method {}, {} iterations x {} repetitions",
        config.problem,
        config.dim,
        config.solver.method,
        config.solver.iterations,
        config.repetitions
    );
    match report.final_std_u0 {
        Some(std) => println!(
            "u(0, xi) estimate: mean {:.6}, std {:.3e}",
            report.final_mean_u0, std
        ),
        None => println!("u(0, xi) estimate: {:.6}", report.final_mean_u0),
    }
    match (report.final_mean_rel_error, problem.reference_value()) {
        (Some(err), Some(reference)) => {
            println!("relative error: {err:.3e} (reference {reference})")
        }
        _ => println!("relative error: no reference value at d = {}", config.dim),
    }
    for c in &report.convergence {
        let at = |it: Option<u64>| it.map_or("never".to_string(), |it| format!("at iteration {it}"));
        println!(
            "repetition {}: loss plateau {}, error below {:.0e} {}",
            c.rep,
            at(c.loss_plateau_iteration),
            config.error_threshold,
            at(c.error_below_iteration)
        );
    }
    println!("wall time: {:.1} s", start.elapsed().as_secs_f64());
    if let Some(dir) = &config.out_dir {
        println!(
            "reports: {}",
            ["trace.csv", "summary.csv", "report.json"]
                .map(|f| dir.join(f).display().to_string())
                .join(", ")
        );
    }
    Ok(())
}

/// Flags first, then the optional JSON config file on top: any field
/// present in the file replaces the flag-derived value, recursively for
/// nested objects such as `solver`.
fn build_run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut solver = SolverConfig::new(Method::parse(&args.method)?, args.seed);
    solver.n_steps = args.n_steps;
    solver.iterations = args.iterations;
    solver.batch = args.batch;
    solver.test_paths = args.test_paths;
    solver.adam = AdamParams::default().with_learning_rate(args.lr);
    let mut config = RunConfig::new(args.problem.clone(), args.d, solver);
    config.repetitions = args.reps;
    config.out_dir = args.out.clone();

    let Some(path) = &args.config else {
        return Ok(config);
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))?;
    let overlay: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))?;
    let mut base = serde_json::to_value(&config)?;
    merge_json(&mut base, overlay);
    serde_json::from_value(base)
        .map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))
}

fn merge_json(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (key, value) in o {
                match b.get_mut(&key) {
                    Some(slot) => merge_json(slot, value),
                    None => {
                        b.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

fn cmd_oracle_hjb(args: OracleArgs) -> Result<()> {
    let problem = ProblemSpec::by_name("hjb", args.d)?;
    let start = Instant::now();
    let rng = RngStream::new(args.seed, 0);
    let estimate = log_transform_mc(
        &|x| problem.terminal(x),
        problem.dim(),
        problem.horizon(),
        args.samples,
        &rng,
    )?;
    println!(
        "u(0, xi) = {:.6} +/- {:.2e} ({} samples, {:.1} s)",
        estimate.value,
        estimate.value_std_error(),
        estimate.samples,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

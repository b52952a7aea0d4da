//! The four training schemes and their shared run plumbing.
//!
//! * [`train_ds`] — step-wise splitting: one network per interior knot,
//!   trained one knot at a time from the terminal condition backward.
//! * [`train_global`] — globally trained splitting (`ds_gt`) or carried
//!   labels (`dfk_gt`): one optimizer over all subnets through the summed
//!   loss.
//! * [`train_dbsde`] — forward shooting: trainable `u(0, xi)` and
//!   `grad u(0, xi)` plus gradient networks, matched to the terminal
//!   condition.
//!
//! [`train`] dispatches on the configured method. Every run is a pure
//! function of its [`SolverConfig`]: path simulation, initialization, and
//! batch draws all derive from the config seed through named sub-streams,
//! so identical configs produce identical traces regardless of thread
//! count.

mod dbsde;
mod splitting;
mod targets;

pub use dbsde::{dbsde_loss, dbsde_rollout, train_dbsde};
pub use splitting::{estimate_u0, global_loss, stepwise_loss, train_ds, train_global};
pub use targets::{build_ds_targets, build_dfk_targets, TargetBatch};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Activation, SubnetStack};
use crate::optim::{AdamParams, AdamState};
use crate::problems::ProblemSpec;
use crate::sde::{simulate_paths, PathBatch, TimeGrid};
use crate::tensor::{Matrix, RngStream};

/// Training scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Forward shooting on the backward equation.
    Dbsde,
    /// Step-wise splitting.
    Ds,
    /// Globally trained splitting.
    DsGt,
    /// Globally trained carried labels.
    DfkGt,
}

impl Method {
    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "dbsde" => Ok(Method::Dbsde),
            "ds" => Ok(Method::Ds),
            "ds_gt" => Ok(Method::DsGt),
            "dfk_gt" => Ok(Method::DfkGt),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected dbsde, ds, ds_gt, or dfk_gt)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Dbsde => "dbsde",
            Method::Ds => "ds",
            Method::DsGt => "ds_gt",
            Method::DfkGt => "dfk_gt",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_true() -> bool {
    true
}

fn default_cadence() -> u64 {
    100
}

fn default_activation() -> Activation {
    Activation::Relu
}

fn default_init_range() -> (f64, f64) {
    (0.0, 1.0)
}

/// Full specification of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    /// Number of time steps `N` (the grid has `N + 1` knots).
    pub n_steps: usize,
    /// Total optimizer iterations.
    pub iterations: u64,
    /// Training batch size (paths per iteration).
    pub batch: usize,
    /// Fixed evaluation paths, drawn once per run.
    pub test_paths: usize,
    pub adam: AdamParams,
    /// Piecewise-constant learning-rate overrides: `(first_step, rate)`.
    #[serde(default)]
    pub lr_schedule: Vec<(u64, f64)>,
    pub seed: u64,
    /// Labels are constants during differentiation. Always true; recorded
    /// so reports state the semantics explicitly.
    #[serde(default = "default_true")]
    pub detach_targets: bool,
    /// Evaluation every this many iterations (plus iterations 0 and It).
    #[serde(default = "default_cadence")]
    pub eval_cadence: u64,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Batch normalization in every subnet. Disabled only in test
    /// configurations.
    #[serde(default = "default_true")]
    pub batch_norm: bool,
    /// Uniform initialization interval for the shooting head.
    #[serde(default = "default_init_range")]
    pub dbsde_init_range: (f64, f64),
    /// Write a checkpoint every this many iterations into
    /// `checkpoint_dir`.
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
    #[serde(default)]
    pub checkpoint_dir: Option<String>,
}

impl SolverConfig {
    /// Benchmark defaults: `N = 20`, 2000 iterations, batch 256, 512 test
    /// paths, Adam at `1e-2`, evaluation every 100 iterations.
    pub fn new(method: Method, seed: u64) -> Self {
        SolverConfig {
            method,
            n_steps: 20,
            iterations: 2000,
            batch: 256,
            test_paths: 512,
            adam: AdamParams::default(),
            lr_schedule: Vec::new(),
            seed,
            detach_targets: true,
            eval_cadence: 100,
            activation: Activation::Relu,
            batch_norm: true,
            dbsde_init_range: (0.0, 1.0),
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 2 {
            return Err(Error::Config(format!(
                "n_steps must be at least 2 so interior networks exist, got {}",
                self.n_steps
            )));
        }
        if self.batch < 2 {
            return Err(Error::Config(format!(
                "batch must be at least 2 for batch statistics, got {}",
                self.batch
            )));
        }
        if self.test_paths < 1 {
            return Err(Error::Config("test_paths must be at least 1".into()));
        }
        if self.eval_cadence == 0 {
            return Err(Error::Config("eval_cadence must be positive".into()));
        }
        if !self.detach_targets {
            return Err(Error::Config(
                "labels are always treated as constants; detach_targets = false is not supported"
                    .into(),
            ));
        }
        let (lo, hi) = self.dbsde_init_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!(
                "dbsde_init_range must be a finite interval, got ({lo}, {hi})"
            )));
        }
        for &(step, rate) in &self.lr_schedule {
            if step == 0 || !(rate > 0.0) || !rate.is_finite() {
                return Err(Error::Config(format!(
                    "lr_schedule entries need step >= 1 and a positive finite rate, got ({step}, {rate})"
                )));
            }
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        if self.checkpoint_every.is_some() && self.checkpoint_dir.is_none() {
            return Err(Error::Config(
                "checkpoint_every is set but checkpoint_dir is not".into(),
            ));
        }
        Ok(())
    }
}

/// One evaluation-point row of a training trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub iteration: u64,
    /// Training loss of the most recent iteration: the summed loss for the
    /// globally trained schemes, the active step's loss for the step-wise
    /// scheme, the terminal matching loss for the shooting scheme. At
    /// iteration 0 (no training yet) it is the evaluation loss.
    pub loss_sum: f64,
    /// The earliest-knot component of the same loss — the step trained
    /// last in the step-wise scheme. Equal to `loss_sum` where no
    /// per-step decomposition exists.
    pub loss_last_step: f64,
    /// Eval-mode loss on the fixed test paths with labels rebuilt from the
    /// current networks.
    pub test_loss: f64,
    pub u0_estimate: f64,
    /// `|estimate - reference| / |reference|`; NaN when the problem carries
    /// no reference value.
    pub rel_error: f64,
    /// Wall-clock seconds since the run started.
    pub runtime_s: f64,
}

/// Evaluation rows of one run, in iteration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTrace {
    points: Vec<TracePoint>,
}

impl TrainingTrace {
    pub fn new() -> Self {
        TrainingTrace::default()
    }

    /// Appends a row; iteration indices must be strictly increasing.
    pub fn push(&mut self, point: TracePoint) {
        if let Some(last) = self.points.last() {
            assert!(
                point.iteration > last.iteration,
                "trace iterations must be strictly increasing ({} after {})",
                point.iteration,
                last.iteration
            );
        }
        self.points.push(point);
    }

    pub fn points(&self) -> &[TracePoint] {
        &self.points
    }

    pub fn last(&self) -> Option<&TracePoint> {
        self.points.last()
    }
}

/// Trains by the configured method.
pub fn train(problem: &ProblemSpec, config: &SolverConfig) -> Result<(SubnetStack, TrainingTrace)> {
    match config.method {
        Method::Dbsde => train_dbsde(problem, config),
        Method::Ds => train_ds(problem, config),
        Method::DsGt | Method::DfkGt => train_global(problem, config),
    }
}

// Sub-stream tags under the config seed. Initialization, evaluation paths,
// and training batches never share a stream.
pub(crate) const INIT_STREAM: u64 = 1;
pub(crate) const TEST_STREAM: u64 = 2;
pub(crate) const TRAIN_STREAM: u64 = 3;

/// Immutable per-run state shared by the training loops.
pub(crate) struct RunContext<'a> {
    pub problem: &'a ProblemSpec,
    pub grid: TimeGrid,
    pub test_paths: PathBatch,
    pub start: Instant,
}

impl<'a> RunContext<'a> {
    pub fn new(
        problem: &'a ProblemSpec,
        config: &SolverConfig,
        root: &RngStream,
    ) -> Result<Self> {
        let grid = TimeGrid::uniform(problem.horizon(), config.n_steps)?;
        let test_rng = root.substream(TEST_STREAM);
        let test_paths = simulate_paths(problem, &grid, config.test_paths, &test_rng)?;
        Ok(RunContext {
            problem,
            grid,
            test_paths,
            start: Instant::now(),
        })
    }
}

/// Mean squared error of the scalar-output batch against labels, and its
/// gradient with respect to the outputs.
pub(crate) fn mse_and_grad(out: &Matrix, labels: &[f64]) -> (f64, Matrix) {
    let b = out.rows();
    debug_assert_eq!(out.cols(), 1);
    debug_assert_eq!(labels.len(), b);
    let mut dout = Matrix::zeros(b, 1);
    let mut loss = 0.0;
    for m in 0..b {
        let r = out.get(m, 0) - labels[m];
        loss += r * r;
        dout.set(m, 0, 2.0 * r / b as f64);
    }
    (loss / b as f64, dout)
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Tags a numerical error with the iteration it happened in.
pub(crate) fn at_iteration(err: Error, it: u64) -> Error {
    match err {
        Error::NonFinite(msg) => Error::NonFinite(format!("{msg} (iteration {it})")),
        other => other,
    }
}

pub(crate) fn maybe_checkpoint(
    config: &SolverConfig,
    stack: &SubnetStack,
    adam: &AdamState,
    iteration: u64,
) -> Result<()> {
    if let (Some(every), Some(dir)) = (config.checkpoint_every, &config.checkpoint_dir) {
        if iteration > 0 && iteration % every == 0 {
            let path =
                std::path::Path::new(dir).join(format!("checkpoint_{iteration:07}.json"));
            crate::checkpoint::save(&path, stack, Some(adam), iteration)?;
        }
    }
    Ok(())
}

/// Eval-mode metrics on the fixed test paths: the summed loss, its
/// earliest-knot component, and the `u(0, xi)` estimate.
pub(crate) fn eval_metrics(
    stack: &SubnetStack,
    ctx: &RunContext,
    method: Method,
) -> Result<(f64, f64, f64)> {
    match method {
        Method::Dbsde => {
            let terminal = dbsde_rollout(stack, &ctx.test_paths, ctx.problem)?;
            let loss = dbsde_loss(&terminal, &ctx.test_paths, ctx.problem);
            let u0 = stack
                .u0
                .ok_or_else(|| Error::Contract("shooting stack has no trainable head".into()))?;
            Ok((loss, loss, u0))
        }
        Method::Ds | Method::DsGt | Method::DfkGt => {
            let targets = match method {
                Method::DfkGt => build_dfk_targets(stack, &ctx.test_paths, ctx.problem)?,
                _ => build_ds_targets(stack, &ctx.test_paths, ctx.problem)?,
            };
            let mut total = 0.0;
            let mut earliest = 0.0;
            for n in 2..=ctx.grid.n_steps() {
                let x = ctx.test_paths.states_at(n - 1);
                let out = stack.subnets[n - 2].forward_eval(&x)?;
                let (loss_n, _) = mse_and_grad(&out, &targets.column(n - 2));
                total += loss_n;
                if n == 2 {
                    earliest = loss_n;
                }
            }
            let u0 = estimate_u0(stack, &ctx.test_paths, Some(&targets), ctx.problem, method)?;
            Ok((total, earliest, u0))
        }
    }
}

/// Builds one trace row at `iteration`. `train_losses` carries the most
/// recent training iteration's `(loss_sum, loss_last_step)`; at iteration 0
/// the evaluation losses stand in for them.
pub(crate) fn eval_point(
    stack: &SubnetStack,
    ctx: &RunContext,
    method: Method,
    iteration: u64,
    train_losses: Option<(f64, f64)>,
) -> Result<TracePoint> {
    let (test_loss, earliest, u0) = eval_metrics(stack, ctx, method)?;
    let (loss_sum, loss_last_step) = train_losses.unwrap_or((test_loss, earliest));
    let rel_error = match ctx.problem.reference_value() {
        Some(r) => (u0 - r).abs() / r.abs(),
        None => f64::NAN,
    };
    Ok(TracePoint {
        iteration,
        loss_sum,
        loss_last_step,
        test_loss,
        u0_estimate: u0,
        rel_error,
        runtime_s: ctx.start.elapsed().as_secs_f64(),
    })
}

/// True at iterations where a trace row is due.
pub(crate) fn is_eval_iteration(it: u64, config: &SolverConfig) -> bool {
    it % config.eval_cadence == 0 || it == config.iterations
}

//! Losses, estimators, and training loops for the splitting-family
//! schemes.

use crate::error::{Error, Result};
use crate::net::{Architecture, Mode, StackGrads, SubnetStack};
use crate::optim::AdamState;
use crate::problems::ProblemSpec;
use crate::sde::{simulate_paths, PathBatch};
use crate::tensor::RngStream;

use super::targets::{
    build_ds_targets, build_dfk_targets, ds_target_column, value_and_increment, TargetBatch,
};
use super::{
    at_iteration, eval_point, is_eval_iteration, maybe_checkpoint, mean, mse_and_grad, Method,
    RunContext, SolverConfig, TrainingTrace, INIT_STREAM, TRAIN_STREAM,
};

/// Train-mode regression loss of step `n` (`2 <= n <= N`): the network at
/// knot `n - 1` against label column `n - 2`.
pub fn stepwise_loss(
    stack: &mut SubnetStack,
    paths: &PathBatch,
    targets: &TargetBatch,
    n: usize,
) -> Result<f64> {
    let big_n = paths.grid().n_steps();
    if n < 2 || n > big_n {
        return Err(Error::Contract(format!(
            "step index {n} outside the trainable range 2..={big_n}"
        )));
    }
    let x = paths.states_at(n - 1);
    let out = stack.subnets[n - 2].forward(&x, Mode::Train)?;
    let (loss, _) = mse_and_grad(&out, &targets.column(n - 2));
    Ok(loss)
}

/// Sum of [`stepwise_loss`] over every trainable step.
pub fn global_loss(
    stack: &mut SubnetStack,
    paths: &PathBatch,
    targets: &TargetBatch,
) -> Result<f64> {
    let mut total = 0.0;
    for n in 2..=paths.grid().n_steps() {
        total += stepwise_loss(stack, paths, targets, n)?;
    }
    Ok(total)
}

/// The `u(0, xi)` estimator for each scheme, on eval-mode networks.
///
/// The carried value at the first interior knot is the network value for
/// the splitting schemes and the label itself for the carried scheme
/// (which therefore needs `targets` built on the same paths); the shooting
/// scheme reads its trainable head directly. In each case the generator
/// increment over the first interval is added before averaging.
pub fn estimate_u0(
    stack: &SubnetStack,
    paths: &PathBatch,
    targets: Option<&TargetBatch>,
    problem: &ProblemSpec,
    method: Method,
) -> Result<f64> {
    match method {
        Method::Dbsde => stack
            .u0
            .ok_or_else(|| Error::Contract("shooting stack has no trainable head".into())),
        Method::Ds | Method::DsGt => {
            let (v, inc) = value_and_increment(stack, paths, problem, 1)?;
            let carried: Vec<f64> = v.iter().zip(&inc).map(|(a, b)| a + b).collect();
            Ok(mean(&carried))
        }
        Method::DfkGt => {
            let targets = targets.ok_or_else(|| {
                Error::Contract(
                    "the carried-label estimator needs the label batch for its paths".into(),
                )
            })?;
            if targets.n_paths() != paths.n_paths() {
                return Err(Error::Contract(format!(
                    "label batch covers {} paths, estimator got {}",
                    targets.n_paths(),
                    paths.n_paths()
                )));
            }
            let (_, inc) = value_and_increment(stack, paths, problem, 1)?;
            let carried: Vec<f64> = (0..paths.n_paths())
                .map(|m| targets.value(m, 0) + inc[m])
                .collect();
            Ok(mean(&carried))
        }
    }
}

fn value_stack(problem: &ProblemSpec, config: &SolverConfig, rng: &mut RngStream) -> SubnetStack {
    let arch = Architecture::value_net(problem.dim())
        .with_activation(config.activation)
        .with_batch_norm(config.batch_norm);
    SubnetStack::init(rng, arch, config.n_steps - 1)
}

/// Globally trained splitting (`ds_gt`) or carried labels (`dfk_gt`): every
/// iteration draws a fresh batch, rebuilds labels from the frozen networks,
/// and takes one optimizer step on the summed loss over all subnets.
pub fn train_global(
    problem: &ProblemSpec,
    config: &SolverConfig,
) -> Result<(SubnetStack, TrainingTrace)> {
    config.validate()?;
    if !matches!(config.method, Method::DsGt | Method::DfkGt) {
        return Err(Error::Config(format!(
            "train_global handles ds_gt and dfk_gt, not {}",
            config.method
        )));
    }
    let root = RngStream::new(config.seed, 0);
    let mut init_rng = root.substream(INIT_STREAM);
    let mut stack = value_stack(problem, config, &mut init_rng);
    let ctx = RunContext::new(problem, config, &root)?;
    let train_rng = root.substream(TRAIN_STREAM);
    let mut adam = AdamState::new(stack.trainable_count(), config.adam)
        .with_schedule(config.lr_schedule.clone());
    let mut trace = TrainingTrace::new();
    trace.push(eval_point(&stack, &ctx, config.method, 0, None)?);

    for it in 1..=config.iterations {
        let iter_rng = train_rng.substream(it);
        let batch = simulate_paths(problem, &ctx.grid, config.batch, &iter_rng)
            .map_err(|e| at_iteration(e, it))?;
        let targets = match config.method {
            Method::DfkGt => build_dfk_targets(&stack, &batch, problem),
            _ => build_ds_targets(&stack, &batch, problem),
        }
        .map_err(|e| at_iteration(e, it))?;

        let mut grads = StackGrads::zeros_like(&stack);
        let mut loss_sum = 0.0;
        let mut loss_earliest = 0.0;
        for n in 2..=config.n_steps {
            let x = batch.states_at(n - 1);
            let (out, cache) = stack.subnets[n - 2].forward_cached(&x, Mode::Train)?;
            let (loss_n, dout) = mse_and_grad(&out, &targets.column(n - 2));
            let (g, _) = stack.subnets[n - 2].backward(&cache, &dout)?;
            grads.subnets[n - 2] = g;
            loss_sum += loss_n;
            if n == 2 {
                loss_earliest = loss_n;
            }
        }
        if !loss_sum.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at iteration {it}"
            )));
        }
        let mut flat = stack.flatten();
        adam.step(&mut flat, &grads.flatten())
            .map_err(|e| at_iteration(e, it))?;
        stack.unflatten(&flat)?;
        maybe_checkpoint(config, &stack, &adam, it)?;
        if is_eval_iteration(it, config) {
            trace.push(eval_point(
                &stack,
                &ctx,
                config.method,
                it,
                Some((loss_sum, loss_earliest)),
            )?);
        }
    }
    Ok((stack, trace))
}

/// Step-wise splitting: networks are trained one knot at a time, from the
/// terminal condition backward, each against labels built from the
/// already-trained later network. The iteration budget is split evenly
/// across the `N - 1` steps, remainder to the step trained last.
pub fn train_ds(problem: &ProblemSpec, config: &SolverConfig) -> Result<(SubnetStack, TrainingTrace)> {
    config.validate()?;
    if config.method != Method::Ds {
        return Err(Error::Config(format!(
            "train_ds handles ds, not {}",
            config.method
        )));
    }
    let root = RngStream::new(config.seed, 0);
    let mut init_rng = root.substream(INIT_STREAM);
    let mut stack = value_stack(problem, config, &mut init_rng);
    let ctx = RunContext::new(problem, config, &root)?;
    let train_rng = root.substream(TRAIN_STREAM);
    let mut trace = TrainingTrace::new();
    trace.push(eval_point(&stack, &ctx, Method::Ds, 0, None)?);

    let phases = (config.n_steps - 1) as u64;
    let per_phase = config.iterations / phases;
    let remainder = config.iterations % phases;
    let per_subnet = stack.arch.params_per_subnet();
    let mut global_it: u64 = 0;

    for n in (2..=config.n_steps).rev() {
        let budget = per_phase + if n == 2 { remainder } else { 0 };
        if budget == 0 {
            continue;
        }
        // Each step is its own regression problem with a fresh optimizer.
        let mut adam = AdamState::new(per_subnet, config.adam)
            .with_schedule(config.lr_schedule.clone());
        for _ in 0..budget {
            global_it += 1;
            let iter_rng = train_rng.substream(global_it);
            let batch = simulate_paths(problem, &ctx.grid, config.batch, &iter_rng)
                .map_err(|e| at_iteration(e, global_it))?;
            let labels = ds_target_column(&stack, &batch, problem, n)
                .map_err(|e| at_iteration(e, global_it))?;
            let x = batch.states_at(n - 1);
            let (out, cache) = stack.subnets[n - 2].forward_cached(&x, Mode::Train)?;
            let (loss, dout) = mse_and_grad(&out, &labels);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss for step {n} at iteration {global_it}"
                )));
            }
            let (grads, _) = stack.subnets[n - 2].backward(&cache, &dout)?;
            let mut flat = Vec::with_capacity(per_subnet);
            stack.subnets[n - 2].flatten_into(&mut flat);
            let mut gflat = Vec::with_capacity(per_subnet);
            grads.flatten_into(&mut gflat);
            adam.step(&mut flat, &gflat)
                .map_err(|e| at_iteration(e, global_it))?;
            let mut pos = 0;
            stack.subnets[n - 2].unflatten_from(&flat, &mut pos);
            maybe_checkpoint(config, &stack, &adam, global_it)?;
            if is_eval_iteration(global_it, config) {
                trace.push(eval_point(
                    &stack,
                    &ctx,
                    Method::Ds,
                    global_it,
                    Some((loss, loss)),
                )?);
            }
        }
    }
    Ok((stack, trace))
}

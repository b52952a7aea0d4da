//! Forward-shooting solver.
//!
//! The value at the initial point and its spatial gradient are trainable
//! scalars (`u0`, `grad0` on the stack), and one gradient network per
//! interior knot supplies `grad u` along the paths. The value is rolled
//! forward with the same left-endpoint Euler discretization as the state:
//!
//! ```text
//! uhat_{n+1} = uhat_n - f(t_n, X_n, uhat_n, sigma^T w_n) dt_{n+1}
//!            + <w_n, sigma(t_n, X_n) dW_n>,
//! ```
//!
//! with `w_0 = grad0` at the known initial state and `w_n` the network
//! output at knot `n` otherwise. Training matches `uhat_N` to `g(X_T)` in
//! mean square; the gradient of that loss is propagated through the whole
//! rollout by a scalar adjoint per path (the recursion is affine in
//! `uhat`, so the adjoint multiplies by `1 - df/dy dt` per step), which
//! needs the generator's exact partials from the problem definition.

use crate::error::{Error, Result};
use crate::net::{Architecture, ForwardCache, Mode, StackGrads, SubnetStack};
use crate::optim::AdamState;
use crate::problems::ProblemSpec;
use crate::sde::PathBatch;
use crate::sde::simulate_paths;
use crate::tensor::{Matrix, RngStream};

use super::{
    at_iteration, eval_point, is_eval_iteration, maybe_checkpoint, Method, RunContext,
    SolverConfig, TrainingTrace, INIT_STREAM, TRAIN_STREAM,
};

fn check_head(stack: &SubnetStack, paths: &PathBatch, problem: &ProblemSpec) -> Result<()> {
    if stack.u0.is_none() || stack.grad0.is_none() {
        return Err(Error::Contract(
            "forward shooting needs a stack with the trainable head".into(),
        ));
    }
    let n = paths.grid().n_steps();
    if stack.n_subnets() != n - 1 {
        return Err(Error::Contract(format!(
            "stack holds {} subnets for a grid with {} steps (expected {})",
            stack.n_subnets(),
            n,
            n - 1
        )));
    }
    if stack.arch.output_dim != problem.dim() {
        return Err(Error::Contract(format!(
            "gradient networks output {} values for a {}-dimensional problem",
            stack.arch.output_dim,
            problem.dim()
        )));
    }
    Ok(())
}

/// One rollout step shared by the eval and training paths: advances
/// `u[m]` across the interval `(t_n, t_{n+1}]` given the per-path gradient
/// rows `w` at knot `n`, writing `sigma^T w` into `z_rows` when provided.
fn advance(
    u: &mut [f64],
    w: &Matrix,
    mut z_rows: Option<&mut Matrix>,
    paths: &PathBatch,
    problem: &ProblemSpec,
    n: usize,
) -> Result<()> {
    let grid = paths.grid();
    let t = grid.knot(n);
    let dt = grid.dt(n + 1);
    let d = problem.dim();
    let mut z = vec![0.0; d];
    let mut noise = vec![0.0; d];
    for m in 0..paths.n_paths() {
        let x = paths.state(m, n);
        let wm = w.row(m);
        problem.diffusion_transpose_apply(t, x, wm, &mut z);
        problem.diffusion_apply(t, x, paths.increment(m, n), &mut noise);
        let transport: f64 = wm.iter().zip(&noise).map(|(a, b)| a * b).sum();
        u[m] = u[m] - problem.generator(t, x, u[m], &z) * dt + transport;
        if !u[m].is_finite() {
            return Err(Error::NonFinite(format!(
                "rolled value for path {m} at step {}",
                n + 1
            )));
        }
        if let Some(rows) = z_rows.as_deref_mut() {
            rows.row_mut(m).copy_from_slice(&z);
        }
    }
    Ok(())
}

/// Initial step from the trainable head: every path starts at `u0` and the
/// known initial state, so the generator term is shared and only the noise
/// transport differs per path.
fn advance_head(u: &mut [f64], stack: &SubnetStack, paths: &PathBatch, problem: &ProblemSpec) {
    let grad0 = stack.grad0.as_ref().expect("head checked");
    let u0 = stack.u0.expect("head checked");
    let grid = paths.grid();
    let t0 = grid.knot(0);
    let dt = grid.dt(1);
    let d = problem.dim();
    let xi = problem.initial_state();
    let mut z0 = vec![0.0; d];
    problem.diffusion_transpose_apply(t0, xi, grad0, &mut z0);
    let f0 = problem.generator(t0, xi, u0, &z0);
    let mut noise = vec![0.0; d];
    for (m, um) in u.iter_mut().enumerate() {
        problem.diffusion_apply(t0, xi, paths.increment(m, 0), &mut noise);
        let transport: f64 = grad0.iter().zip(&noise).map(|(a, b)| a * b).sum();
        *um = u0 - f0 * dt + transport;
    }
}

/// Rolls the value forward along every path with eval-mode networks and
/// returns the terminal estimates `uhat(t_N, X_T)`.
pub fn dbsde_rollout(
    stack: &SubnetStack,
    paths: &PathBatch,
    problem: &ProblemSpec,
) -> Result<Vec<f64>> {
    check_head(stack, paths, problem)?;
    let big_n = paths.grid().n_steps();
    let mut u = vec![0.0; paths.n_paths()];
    advance_head(&mut u, stack, paths, problem);
    for m in 0..u.len() {
        if !u[m].is_finite() {
            return Err(Error::NonFinite(format!(
                "rolled value for path {m} at step 1"
            )));
        }
    }
    for n in 1..big_n {
        let x = paths.states_at(n);
        let w = stack.subnets[n - 1].forward_eval(&x)?;
        advance(&mut u, &w, None, paths, problem, n)?;
    }
    Ok(u)
}

/// Mean squared terminal mismatch `(1/M) sum (g(X_T) - uhat_N)^2`.
pub fn dbsde_loss(terminal: &[f64], paths: &PathBatch, problem: &ProblemSpec) -> f64 {
    let big_n = paths.grid().n_steps();
    let m = terminal.len();
    let mut loss = 0.0;
    for (i, u) in terminal.iter().enumerate() {
        let r = problem.terminal(paths.state(i, big_n)) - u;
        loss += r * r;
    }
    loss / m as f64
}

/// Everything the adjoint pass needs from a train-mode rollout.
struct RolloutTape {
    /// `u[n][m]` for `n = 0..=N` (`u[0]` is the head value on every path).
    u: Vec<Vec<f64>>,
    /// `z[n-1] = sigma^T w_n` per path, `n = 1..=N-1`.
    z: Vec<Matrix>,
    caches: Vec<ForwardCache>,
}

fn rollout_train(
    stack: &mut SubnetStack,
    paths: &PathBatch,
    problem: &ProblemSpec,
) -> Result<RolloutTape> {
    check_head(stack, paths, problem)?;
    let big_n = paths.grid().n_steps();
    let b = paths.n_paths();
    let d = problem.dim();
    let mut u_levels = Vec::with_capacity(big_n + 1);
    u_levels.push(vec![stack.u0.expect("head checked"); b]);
    let mut u = vec![0.0; b];
    advance_head(&mut u, stack, paths, problem);
    u_levels.push(u.clone());
    let mut z_levels = Vec::with_capacity(big_n - 1);
    let mut caches = Vec::with_capacity(big_n - 1);
    for n in 1..big_n {
        let x = paths.states_at(n);
        let (w, cache) = stack.subnets[n - 1].forward_cached(&x, Mode::Train)?;
        let mut z = Matrix::zeros(b, d);
        advance(&mut u, &w, Some(&mut z), paths, problem, n)?;
        u_levels.push(u.clone());
        z_levels.push(z);
        caches.push(cache);
    }
    Ok(RolloutTape {
        u: u_levels,
        z: z_levels,
        caches,
    })
}

/// Adjoint pass through the rollout: returns the loss and the gradient of
/// the loss with respect to every trainable, head included.
fn rollout_backward(
    stack: &SubnetStack,
    paths: &PathBatch,
    problem: &ProblemSpec,
    tape: &RolloutTape,
) -> Result<(f64, StackGrads)> {
    let grid = paths.grid();
    let big_n = grid.n_steps();
    let b = paths.n_paths();
    let d = problem.dim();
    let terminal = &tape.u[big_n];
    let mut loss = 0.0;
    // lambda[m] = dL/d uhat_{n+1}[m], starting at the terminal level.
    let mut lambda = vec![0.0; b];
    for m in 0..b {
        let r = terminal[m] - problem.terminal(paths.state(m, big_n));
        loss += r * r;
        lambda[m] = 2.0 * r / b as f64;
    }
    loss /= b as f64;

    let mut grads = StackGrads::zeros_like(stack);
    let mut fz = vec![0.0; d];
    let mut sig_fz = vec![0.0; d];
    let mut sig_dw = vec![0.0; d];
    for n in (1..big_n).rev() {
        let t = grid.knot(n);
        let dt = grid.dt(n + 1);
        let mut dout = Matrix::zeros(b, d);
        for m in 0..b {
            let x = paths.state(m, n);
            let y = tape.u[n][m];
            let z = tape.z[n - 1].row(m);
            problem.generator_dz(t, x, y, z, &mut fz);
            problem.diffusion_apply(t, x, &fz, &mut sig_fz);
            problem.diffusion_apply(t, x, paths.increment(m, n), &mut sig_dw);
            let row = dout.row_mut(m);
            for i in 0..d {
                row[i] = lambda[m] * (sig_dw[i] - dt * sig_fz[i]);
            }
            lambda[m] *= 1.0 - problem.generator_dy(t, x, y, z) * dt;
        }
        let (g, _) = stack.subnets[n - 1].backward(&tape.caches[n - 1], &dout)?;
        grads.subnets[n - 1] = g;
    }

    // Head: uhat_1 = u0 - f(t_0, xi, u0, sigma^T grad0) dt_1
    //              + <grad0, sigma dW_0>.
    let t0 = grid.knot(0);
    let dt1 = grid.dt(1);
    let xi = problem.initial_state();
    let u0 = stack.u0.expect("head checked");
    let grad0 = stack.grad0.as_ref().expect("head checked");
    let mut z0 = vec![0.0; d];
    problem.diffusion_transpose_apply(t0, xi, grad0, &mut z0);
    problem.generator_dz(t0, xi, u0, &z0, &mut fz);
    problem.diffusion_apply(t0, xi, &fz, &mut sig_fz);
    let fy0 = problem.generator_dy(t0, xi, u0, &z0);
    let mut du0 = 0.0;
    let mut dgrad0 = vec![0.0; d];
    for m in 0..b {
        du0 += lambda[m] * (1.0 - fy0 * dt1);
        problem.diffusion_apply(t0, xi, paths.increment(m, 0), &mut sig_dw);
        for i in 0..d {
            dgrad0[i] += lambda[m] * (sig_dw[i] - dt1 * sig_fz[i]);
        }
    }
    grads.u0 = Some(du0);
    grads.grad0 = Some(dgrad0);
    Ok((loss, grads))
}

/// Forward-shooting training: every iteration rolls a fresh batch forward,
/// matches the terminal condition, and takes one optimizer step on all
/// trainables (head and networks together). The reported `u(0, xi)`
/// estimate is the head value itself.
pub fn train_dbsde(
    problem: &ProblemSpec,
    config: &SolverConfig,
) -> Result<(SubnetStack, TrainingTrace)> {
    config.validate()?;
    if config.method != Method::Dbsde {
        return Err(Error::Config(format!(
            "train_dbsde handles dbsde, not {}",
            config.method
        )));
    }
    let root = RngStream::new(config.seed, 0);
    let mut init_rng = root.substream(INIT_STREAM);
    let arch = Architecture::gradient_net(problem.dim())
        .with_activation(config.activation)
        .with_batch_norm(config.batch_norm);
    let mut stack = SubnetStack::init_with_head(
        &mut init_rng,
        arch,
        config.n_steps - 1,
        config.dbsde_init_range,
    );
    let ctx = RunContext::new(problem, config, &root)?;
    let train_rng = root.substream(TRAIN_STREAM);
    let mut adam = AdamState::new(stack.trainable_count(), config.adam)
        .with_schedule(config.lr_schedule.clone());
    let mut trace = TrainingTrace::new();
    trace.push(eval_point(&stack, &ctx, Method::Dbsde, 0, None)?);

    for it in 1..=config.iterations {
        let iter_rng = train_rng.substream(it);
        let batch = simulate_paths(problem, &ctx.grid, config.batch, &iter_rng)
            .map_err(|e| at_iteration(e, it))?;
        let tape = rollout_train(&mut stack, &batch, problem).map_err(|e| at_iteration(e, it))?;
        let (loss, grads) =
            rollout_backward(&stack, &batch, problem, &tape).map_err(|e| at_iteration(e, it))?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "terminal matching loss at iteration {it}"
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
                Method::Dbsde,
                it,
                Some((loss, loss)),
            )?);
        }
    }
    Ok((stack, trace))
}

//! Regression labels for the splitting-family solvers.
//!
//! Both label constructions walk the same one-step-ahead data. Writing
//! `v_n` for the frozen network value at knot `n`, `z_n` for
//! `sigma^T` times its input gradient, and `dt_n = t_n - t_{n-1}`:
//!
//! * splitting labels carry the *network* value:
//!   `label(t_{n-1}) = v_n + f(t_n, X_n, v_n, z_n) dt_n`, with the terminal
//!   line using `g` and `grad g` in place of the network;
//! * carried labels thread the *label itself* backward:
//!   `label(t_{n-1}) = label(t_n) + f(t_n, X_n, v_n, z_n) dt_n`, seeded by
//!   the same terminal line.
//!
//! With one interior knot (`N = 2`) only the terminal line exists and the
//! two constructions coincide bit for bit. With `f = 0` the carried
//! construction telescopes to `g(X_T)` in every column, which is what makes
//! the carried estimator collapse to plain Monte Carlo on linear problems.
//!
//! All label inputs come from eval-mode (frozen) networks; labels are
//! constants during parameter differentiation.

use crate::error::{Error, Result};
use crate::net::{Mode, SubnetStack};
use crate::problems::ProblemSpec;
use crate::sde::PathBatch;
use crate::tensor::Matrix;

/// Per-path regression labels. Entry `(m, j)` labels the value at knot
/// `j + 1` on path `m`, `j = 0 .. N-2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetBatch {
    values: Matrix,
}

impl TargetBatch {
    pub fn new(values: Matrix) -> Self {
        TargetBatch { values }
    }

    pub fn n_paths(&self) -> usize {
        self.values.rows()
    }

    /// Number of labeled knots, `N - 1`.
    pub fn n_labels(&self) -> usize {
        self.values.cols()
    }

    /// Label for path `m` at knot `j + 1`.
    pub fn value(&self, m: usize, j: usize) -> f64 {
        self.values.get(m, j)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// Column `j` gathered into a vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.values.rows()).map(|m| self.values.get(m, j)).collect()
    }
}

/// `g(X_T) + f(t_N, X_T, g(X_T), sigma^T grad g(X_T)) * dt_N` per path.
fn terminal_column(problem: &ProblemSpec, paths: &PathBatch) -> Vec<f64> {
    let grid = paths.grid();
    let n = grid.n_steps();
    let t_end = grid.horizon();
    let dt = grid.dt(n);
    let d = problem.dim();
    let mut grad = vec![0.0; d];
    let mut z = vec![0.0; d];
    (0..paths.n_paths())
        .map(|m| {
            let x = paths.state(m, n);
            let g = problem.terminal(x);
            problem.terminal_gradient(x, &mut grad);
            problem.diffusion_transpose_apply(t_end, x, &grad, &mut z);
            g + problem.generator(t_end, x, g, &z) * dt
        })
        .collect()
}

/// Frozen network value `v_n` and generator increment
/// `f(t_n, X_n, v_n, z_n) * dt_n` at knot `n` (`1 <= n <= N-1`), per path.
pub(crate) fn value_and_increment(
    stack: &SubnetStack,
    paths: &PathBatch,
    problem: &ProblemSpec,
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = paths.grid();
    let t = grid.knot(n);
    let dt = grid.dt(n);
    let x = paths.states_at(n);
    let subnet = &stack.subnets[n - 1];
    let v = subnet.forward_eval(&x)?;
    let grads = subnet.input_gradient(&x, Mode::Eval)?;
    let d = problem.dim();
    let mut z = vec![0.0; d];
    let mut vals = Vec::with_capacity(paths.n_paths());
    let mut incs = Vec::with_capacity(paths.n_paths());
    for m in 0..paths.n_paths() {
        let xm = x.row(m);
        problem.diffusion_transpose_apply(t, xm, grads.row(m), &mut z);
        let vm = v.get(m, 0);
        vals.push(vm);
        incs.push(problem.generator(t, xm, vm, &z) * dt);
    }
    Ok((vals, incs))
}

fn check_column_finite(col: &[f64], n: usize) -> Result<()> {
    for (m, v) in col.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "regression label for path {m} at time step {n}"
            )));
        }
    }
    Ok(())
}

/// Label column for training step `n` (`2 <= n <= N`) of the step-wise
/// scheme, freshly built from the network at knot `n` (or the terminal data
/// when `n = N`).
pub(crate) fn ds_target_column(
    stack: &SubnetStack,
    paths: &PathBatch,
    problem: &ProblemSpec,
    n: usize,
) -> Result<Vec<f64>> {
    let big_n = paths.grid().n_steps();
    let col = if n == big_n {
        terminal_column(problem, paths)
    } else {
        let (v, inc) = value_and_increment(stack, paths, problem, n)?;
        v.iter().zip(&inc).map(|(a, b)| a + b).collect()
    };
    check_column_finite(&col, n)?;
    Ok(col)
}

fn check_shapes(stack: &SubnetStack, paths: &PathBatch, problem: &ProblemSpec) -> Result<()> {
    let n = paths.grid().n_steps();
    if n < 2 {
        return Err(Error::Contract(
            "label construction needs at least two time steps".into(),
        ));
    }
    if stack.n_subnets() != n - 1 {
        return Err(Error::Contract(format!(
            "stack holds {} subnets for a grid with {} steps (expected {})",
            stack.n_subnets(),
            n,
            n - 1
        )));
    }
    if paths.dim() != problem.dim() {
        return Err(Error::Contract(format!(
            "paths are {}-dimensional, problem is {}-dimensional",
            paths.dim(),
            problem.dim()
        )));
    }
    Ok(())
}

/// Splitting labels: column `j` is
/// `v_{j+2} + f(t_{j+2}, X, v_{j+2}, z_{j+2}) dt_{j+2}` from the frozen
/// network at knot `j + 2`, and the last column comes from the terminal
/// data.
pub fn build_ds_targets(
    stack: &SubnetStack,
    paths: &PathBatch,
    problem: &ProblemSpec,
) -> Result<TargetBatch> {
    check_shapes(stack, paths, problem)?;
    let big_n = paths.grid().n_steps();
    let mut values = Matrix::zeros(paths.n_paths(), big_n - 1);
    for n in 2..=big_n {
        let col = ds_target_column(stack, paths, problem, n)?;
        for (m, v) in col.iter().enumerate() {
            values.set(m, n - 2, *v);
        }
    }
    Ok(TargetBatch::new(values))
}

/// Carried labels: the terminal column is shared with [`build_ds_targets`];
/// every earlier column adds the generator increment to the *next column's
/// label* rather than to the network value.
pub fn build_dfk_targets(
    stack: &SubnetStack,
    paths: &PathBatch,
    problem: &ProblemSpec,
) -> Result<TargetBatch> {
    check_shapes(stack, paths, problem)?;
    let big_n = paths.grid().n_steps();
    let mut values = Matrix::zeros(paths.n_paths(), big_n - 1);
    let term = terminal_column(problem, paths);
    check_column_finite(&term, big_n)?;
    for (m, v) in term.iter().enumerate() {
        values.set(m, big_n - 2, *v);
    }
    for n in (2..=big_n - 1).rev() {
        let (_, inc) = value_and_increment(stack, paths, problem, n)?;
        for (m, i) in inc.iter().enumerate() {
            let carried = values.get(m, n - 1) + i;
            if !carried.is_finite() {
                return Err(Error::NonFinite(format!(
                    "regression label for path {m} at time step {n}"
                )));
            }
            values.set(m, n - 2, carried);
        }
    }
    Ok(TargetBatch::new(values))
}

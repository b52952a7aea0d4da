//! Time grids and Euler-Maruyama path simulation.
//!
//! Paths follow the explicit scheme
//!
//! ```text
//! X[m][n] = X[m][n-1] + mu(t[n-1], X[m][n-1]) dt[n]
//!                     + sigma(t[n-1], X[m][n-1]) dW[m][n-1],
//! ```
//!
//! with `X[m][0] = xi` and `dW[m][n-1] ~ N(0, dt[n] I)`.  Both the states
//! and the increments are stored, and the recursion above reconstructs the
//! stored states bit-exactly (the simulation itself evaluates that exact
//! expression, once).
//!
//! Each path consumes its own deterministic sub-stream keyed by the path
//! index, so batches are bit-identical no matter how the work is spread
//! across threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problems::ProblemSpec;
use crate::tensor::{Matrix, RngStream};

/// Strictly increasing knots `t[0] = 0 < t[1] < ... < t[N] = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid with `n_steps` steps of length `T / n_steps`.
    pub fn uniform(horizon: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::Contract(
                "a time grid needs at least one step".into(),
            ));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Contract(format!(
                "time horizon must be positive and finite, got {horizon}"
            )));
        }
        let dt = horizon / n_steps as f64;
        let mut knots: Vec<f64> = (0..=n_steps).map(|k| k as f64 * dt).collect();
        // Land exactly on the horizon regardless of rounding in k * dt.
        knots[n_steps] = horizon;
        Ok(TimeGrid { knots })
    }

    /// Number of steps `N`.
    pub fn n_steps(&self) -> usize {
        self.knots.len() - 1
    }

    /// Knot `t[k]`, `0 <= k <= N`.
    pub fn knot(&self, k: usize) -> f64 {
        self.knots[k]
    }

    pub fn horizon(&self) -> f64 {
        *self.knots.last().expect("grid holds at least two knots")
    }

    /// Step length `dt[k] = t[k] - t[k-1]`, `1 <= k <= N`; always the length
    /// of the actual interval, never a nominal value.
    pub fn dt(&self, k: usize) -> f64 {
        self.knots[k] - self.knots[k - 1]
    }
}

/// A batch of simulated paths: states `[M x (N+1) x d]` and increments
/// `[M x N x d]`, both row-major with the path index outermost.
#[derive(Debug, Clone)]
pub struct PathBatch {
    grid: TimeGrid,
    n_paths: usize,
    dim: usize,
    states: Vec<f64>,
    increments: Vec<f64>,
}

impl PathBatch {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// State `X[m][n]` as a `d`-slice.
    pub fn state(&self, m: usize, n: usize) -> &[f64] {
        let steps = self.grid.n_steps() + 1;
        debug_assert!(m < self.n_paths && n < steps);
        let off = (m * steps + n) * self.dim;
        &self.states[off..off + self.dim]
    }

    /// Increment `dW[m][i]` over `(t[i], t[i+1]]` as a `d`-slice.
    pub fn increment(&self, m: usize, i: usize) -> &[f64] {
        debug_assert!(m < self.n_paths && i < self.grid.n_steps());
        let off = (m * self.grid.n_steps() + i) * self.dim;
        &self.increments[off..off + self.dim]
    }

    /// All states at knot `n`, stacked as a `[M x d]` matrix.
    pub fn states_at(&self, n: usize) -> Matrix {
        let mut out = Matrix::zeros(self.n_paths, self.dim);
        for m in 0..self.n_paths {
            out.row_mut(m).copy_from_slice(self.state(m, n));
        }
        out
    }

    /// Reorders paths by the given index permutation (testing hook for
    /// permutation-invariance checks).
    pub fn permuted(&self, order: &[usize]) -> Result<PathBatch> {
        if order.len() != self.n_paths {
            return Err(Error::Contract(format!(
                "permutation of length {} applied to {} paths",
                order.len(),
                self.n_paths
            )));
        }
        let steps = self.grid.n_steps() + 1;
        let mut out = self.clone();
        for (dst, &src) in order.iter().enumerate() {
            let d = self.dim;
            out.states[dst * steps * d..(dst + 1) * steps * d]
                .copy_from_slice(&self.states[src * steps * d..(src + 1) * steps * d]);
            let nd = self.grid.n_steps() * d;
            out.increments[dst * nd..(dst + 1) * nd]
                .copy_from_slice(&self.increments[src * nd..(src + 1) * nd]);
        }
        Ok(out)
    }
}

/// Simulates `n_paths` Euler-Maruyama paths started at the problem's initial
/// state. Path `m` draws from `rng.substream(m)`; a non-finite state aborts
/// naming the path and step.
pub fn simulate_paths(
    problem: &ProblemSpec,
    grid: &TimeGrid,
    n_paths: usize,
    rng: &RngStream,
) -> Result<PathBatch> {
    simulate_impl(problem, grid, n_paths, Some(rng), None)
}

/// Testing hook: simulates with caller-supplied increments
/// (`[M x N x d]`, path-major) instead of fresh draws.
pub fn simulate_paths_with_increments(
    problem: &ProblemSpec,
    grid: &TimeGrid,
    n_paths: usize,
    increments: &[f64],
) -> Result<PathBatch> {
    let expect = n_paths * grid.n_steps() * problem.dim();
    if increments.len() != expect {
        return Err(Error::Contract(format!(
            "increment buffer holds {} values, expected {}",
            increments.len(),
            expect
        )));
    }
    simulate_impl(problem, grid, n_paths, None, Some(increments))
}

fn simulate_impl(
    problem: &ProblemSpec,
    grid: &TimeGrid,
    n_paths: usize,
    rng: Option<&RngStream>,
    injected: Option<&[f64]>,
) -> Result<PathBatch> {
    let d = problem.dim();
    let n = grid.n_steps();
    let xi = problem.initial_state();
    let mut states = vec![0.0; n_paths * (n + 1) * d];
    let mut increments = vec![0.0; n_paths * n * d];

    let results: Vec<Result<()>> = states
        .par_chunks_mut((n + 1) * d)
        .zip(increments.par_chunks_mut(n * d))
        .enumerate()
        .map(|(m, (path_states, path_incs))| {
            let mut stream = rng.map(|r| r.substream(m as u64));
            path_states[..d].copy_from_slice(xi);
            let mut drift = vec![0.0; d];
            let mut noise = vec![0.0; d];
            for step in 1..=n {
                let dt = grid.dt(step);
                let sqrt_dt = dt.sqrt();
                let t_prev = grid.knot(step - 1);
                let inc_off = (step - 1) * d;
                match (&mut stream, injected) {
                    (Some(s), None) => {
                        let dw = &mut path_incs[inc_off..inc_off + d];
                        s.fill_standard_normals(dw);
                        for w in dw.iter_mut() {
                            *w *= sqrt_dt;
                        }
                    }
                    (None, Some(all)) => {
                        let src = (m * n + (step - 1)) * d;
                        path_incs[inc_off..inc_off + d].copy_from_slice(&all[src..src + d]);
                    }
                    _ => unreachable!("exactly one increment source is configured"),
                }
                let (prev, rest) = path_states.split_at_mut(step * d);
                let x_prev = &prev[(step - 1) * d..];
                let x_next = &mut rest[..d];
                problem.drift(t_prev, x_prev, &mut drift);
                problem.diffusion_apply(
                    t_prev,
                    x_prev,
                    &path_incs[inc_off..inc_off + d],
                    &mut noise,
                );
                for i in 0..d {
                    x_next[i] = x_prev[i] + drift[i] * dt + noise[i];
                    if !x_next[i].is_finite() {
                        return Err(Error::NonFinite(format!(
                            "state of path {m} at step {step} (coordinate {i})"
                        )));
                    }
                }
            }
            Ok(())
        })
        .collect();
    for r in results {
        r?;
    }

    Ok(PathBatch {
        grid: grid.clone(),
        n_paths,
        dim: d,
        states,
        increments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{hjb_problem, pricing_diffrate_problem};

    #[test]
    fn uniform_grid_step_lengths() {
        let g = TimeGrid::uniform(1.0, 20).unwrap();
        assert_eq!(g.n_steps(), 20);
        for k in 1..=20 {
            assert!((g.dt(k) - 0.05).abs() < 1e-15);
        }
        assert_eq!(g.knot(0), 0.0);
        assert_eq!(g.horizon(), 1.0);

        let g = TimeGrid::uniform(0.3, 20).unwrap();
        for k in 1..=20 {
            assert!((g.dt(k) - 0.015).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_step_grid_is_rejected() {
        assert!(TimeGrid::uniform(1.0, 0).is_err());
        assert!(TimeGrid::uniform(0.0, 5).is_err());
        assert!(TimeGrid::uniform(-1.0, 5).is_err());
    }

    #[test]
    fn driftless_noiseless_paths_stay_at_the_initial_state() {
        // Inject zero increments into a zero-drift problem.
        let problem = hjb_problem(3);
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let incs = vec![0.0; 2 * 4 * 3];
        let batch = simulate_paths_with_increments(&problem, &grid, 2, &incs).unwrap();
        for m in 0..2 {
            for n in 0..=4 {
                assert_eq!(batch.state(m, n), &[0.0, 0.0, 0.0]);
            }
        }
    }

    #[test]
    fn single_step_matches_hand_computation_for_additive_noise() {
        // sigma = sqrt(2) I, X0 = 0, dW = 0.5: X1 = sqrt(2) * 0.5.
        let problem = hjb_problem(1);
        let grid = TimeGrid::uniform(1.0, 1).unwrap();
        let batch = simulate_paths_with_increments(&problem, &grid, 1, &[0.5]).unwrap();
        assert!((batch.state(0, 1)[0] - 0.707_106_781_2).abs() < 1e-10);
    }

    #[test]
    fn single_step_matches_hand_computation_for_geometric_drift() {
        // dX = 0.06 X dt with dt = 0.025 and no noise: 100 -> 100.15.
        let problem = pricing_diffrate_problem(1);
        let grid = TimeGrid::uniform(0.5, 20).unwrap();
        let incs = vec![0.0; 20];
        let batch = simulate_paths_with_increments(&problem, &grid, 1, &incs).unwrap();
        assert!((batch.state(0, 1)[0] - 100.15).abs() < 1e-12);
    }

    #[test]
    fn stored_increments_reconstruct_stored_states_bit_exactly() {
        let problem = pricing_diffrate_problem(5);
        let grid = TimeGrid::uniform(0.5, 10).unwrap();
        let rng = RngStream::new(100, 42);
        let batch = simulate_paths(&problem, &grid, 16, &rng).unwrap();
        let d = 5;
        let mut drift = vec![0.0; d];
        let mut noise = vec![0.0; d];
        for m in 0..16 {
            for step in 1..=10 {
                let x_prev = batch.state(m, step - 1);
                let dt = grid.dt(step);
                let t_prev = grid.knot(step - 1);
                problem.drift(t_prev, x_prev, &mut drift);
                problem.diffusion_apply(t_prev, x_prev, batch.increment(m, step - 1), &mut noise);
                for i in 0..d {
                    let rebuilt = x_prev[i] + drift[i] * dt + noise[i];
                    assert_eq!(
                        rebuilt.to_bits(),
                        batch.state(m, step)[i].to_bits(),
                        "path {m} step {step} coord {i}"
                    );
                }
            }
        }
    }

    #[test]
    fn simulation_is_deterministic_and_thread_count_independent() {
        let problem = hjb_problem(4);
        let grid = TimeGrid::uniform(1.0, 6).unwrap();
        let rng = RngStream::new(7, 9);
        let a = simulate_paths(&problem, &grid, 32, &rng).unwrap();
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = single.install(|| simulate_paths(&problem, &grid, 32, &rng).unwrap());
        let quad = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let c = quad.install(|| simulate_paths(&problem, &grid, 32, &rng).unwrap());
        assert_eq!(a.states, b.states);
        assert_eq!(a.states, c.states);
        assert_eq!(a.increments, c.increments);
    }

    #[test]
    fn geometric_mean_stays_within_three_standard_errors() {
        // E X_T = xi exp(mu_bar T) for geometric dynamics; the Euler scheme's
        // drift is linear so its mean has no discretization bias beyond
        // (1 + mu dt)^N vs exp(mu T), far below the MC band at these sizes.
        let problem = pricing_diffrate_problem(1);
        let grid = TimeGrid::uniform(0.5, 20).unwrap();
        let rng = RngStream::new(2025, 0);
        let n_paths = 100_000;
        let batch = simulate_paths(&problem, &grid, n_paths, &rng).unwrap();
        let finals: Vec<f64> = (0..n_paths).map(|m| batch.state(m, 20)[0]).collect();
        let mean = finals.iter().sum::<f64>() / n_paths as f64;
        let var = finals
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / (n_paths as f64 - 1.0);
        let se = (var / n_paths as f64).sqrt();
        let expect = 100.0 * (0.06f64 * 0.5).exp();
        assert!(
            (mean - expect).abs() < 3.0 * se,
            "mean {mean} vs {expect} (se {se})"
        );
    }

    #[test]
    fn additive_noise_variance_stays_within_three_standard_errors() {
        // For sigma = sqrt(2) I and no drift, Var(X_T) = 2 T per coordinate.
        let problem = hjb_problem(2);
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let rng = RngStream::new(2026, 0);
        let n_paths = 100_000;
        let batch = simulate_paths(&problem, &grid, n_paths, &rng).unwrap();
        for coord in 0..2 {
            let finals: Vec<f64> = (0..n_paths).map(|m| batch.state(m, 20)[coord]).collect();
            let mean = finals.iter().sum::<f64>() / n_paths as f64;
            let var = finals
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / (n_paths as f64 - 1.0);
            // Standard error of a sample variance of a normal: var sqrt(2/(n-1)).
            let se = var * (2.0 / (n_paths as f64 - 1.0)).sqrt();
            assert!(
                (var - 2.0).abs() < 3.0 * se,
                "coord {coord}: var {var} vs 2.0 (se {se})"
            );
        }
    }

    #[test]
    fn non_finite_state_is_reported_with_path_and_step() {
        let problem = pricing_diffrate_problem(1);
        let grid = TimeGrid::uniform(0.5, 2).unwrap();
        let incs = vec![0.0, f64::MAX];
        let err = simulate_paths_with_increments(&problem, &grid, 1, &incs)
            .unwrap_err()
            .to_string();
        assert!(err.contains("path 0") && err.contains("step 2"), "{err}");
    }

    #[test]
    fn states_at_gathers_rows_in_path_order() {
        let problem = hjb_problem(2);
        let grid = TimeGrid::uniform(1.0, 3).unwrap();
        let rng = RngStream::new(55, 0);
        let batch = simulate_paths(&problem, &grid, 4, &rng).unwrap();
        let at2 = batch.states_at(2);
        for m in 0..4 {
            assert_eq!(at2.row(m), batch.state(m, 2));
        }
    }
}

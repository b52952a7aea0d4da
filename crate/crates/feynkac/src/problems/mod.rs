//! Benchmark problem definitions.
//!
//! A [`ProblemSpec`] packages the coefficient functions of one semilinear
//! parabolic terminal-value problem:
//!
//! ```text
//! du/dt + (1/2) Tr(sigma sigma^T Hess_x u) + grad_x u . mu
//!       + f(t, x, u, sigma^T grad_x u) = 0,      u(T, x) = g(x).
//! ```
//!
//! The diffusion enters only through its action on vectors
//! (`sigma v` and `sigma^T v`), so diagonal and scalar diffusions never
//! materialize a `d x d` matrix.  The generator's partial derivatives in
//! `y` and `z` are part of the problem definition because the
//! forward-shooting solver differentiates through `f` along its rollout;
//! they are exact, not numerical.

mod oracle;

pub use oracle::{log_transform_mc, McEstimate};

use crate::error::{Error, Result};

/// How the stored reference value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceProvenance {
    /// Recomputable here by Monte Carlo (see [`hjb_reference_mc`]).
    MonteCarloRecomputable,
    /// Transcribed benchmark constant.
    Transcribed,
}

type DriftFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
type DiffusionFn = dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync;
type GeneratorFn = dyn Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync;
type GeneratorGradZFn = dyn Fn(f64, &[f64], f64, &[f64], &mut [f64]) + Send + Sync;
type TerminalFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type TerminalGradFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// One terminal-value problem instance.
pub struct ProblemSpec {
    name: &'static str,
    dim: usize,
    horizon: f64,
    initial_state: Vec<f64>,
    drift: Box<DriftFn>,
    diffusion: Box<DiffusionFn>,
    diffusion_transpose: Box<DiffusionFn>,
    generator: Box<GeneratorFn>,
    generator_dy: Box<GeneratorFn>,
    generator_dz: Box<GeneratorGradZFn>,
    terminal: Box<TerminalFn>,
    terminal_gradient: Box<TerminalGradFn>,
    reference_value: Option<f64>,
    reference_provenance: ReferenceProvenance,
}

impl ProblemSpec {
    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Terminal time `T`.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// The point `xi` where `u(0, xi)` is estimated.
    pub fn initial_state(&self) -> &[f64] {
        &self.initial_state
    }

    /// Published benchmark value for `u(0, xi)`, when one exists for this
    /// dimension (the benchmarks are pinned at `d = 100`).
    pub fn reference_value(&self) -> Option<f64> {
        self.reference_value
    }

    pub fn reference_provenance(&self) -> ReferenceProvenance {
        self.reference_provenance
    }

    pub fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, out)
    }

    /// `out = sigma(t, x) v`.
    pub fn diffusion_apply(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, v, out)
    }

    /// `out = sigma(t, x)^T v`.
    pub fn diffusion_transpose_apply(&self, t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        (self.diffusion_transpose)(t, x, v, out)
    }

    /// Generator `f(t, x, y, z)`.
    pub fn generator(&self, t: f64, x: &[f64], y: f64, z: &[f64]) -> f64 {
        (self.generator)(t, x, y, z)
    }

    /// Exact partial `df/dy`.
    pub fn generator_dy(&self, t: f64, x: &[f64], y: f64, z: &[f64]) -> f64 {
        (self.generator_dy)(t, x, y, z)
    }

    /// Exact gradient `df/dz` written into `out`.
    pub fn generator_dz(&self, t: f64, x: &[f64], y: f64, z: &[f64], out: &mut [f64]) {
        (self.generator_dz)(t, x, y, z, out)
    }

    /// Terminal condition `g(x)`.
    pub fn terminal(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }

    /// Gradient of the terminal condition, written into `out`.
    pub fn terminal_gradient(&self, x: &[f64], out: &mut [f64]) {
        (self.terminal_gradient)(x, out)
    }

    /// Looks a problem up by its CLI name.
    pub fn by_name(name: &str, dim: usize) -> Result<ProblemSpec> {
        match name {
            "hjb" => Ok(hjb_problem(dim)),
            "allen_cahn" => Ok(allen_cahn_problem(dim)),
            "pricing_diffrate" => Ok(pricing_diffrate_problem(dim)),
            other => Err(Error::Config(format!(
                "unknown problem '{other}' (expected hjb, allen_cahn, or pricing_diffrate)"
            ))),
        }
    }
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("reference_value", &self.reference_value)
            .finish()
    }
}

/// Assembles a [`ProblemSpec`] for a user-defined equation.
///
/// Every coefficient defaults to the simplest choice (zero drift, identity
/// diffusion, zero generator with zero partials, zero terminal condition,
/// `xi = 0`, no reference value), so a caller only overrides what the
/// problem actually uses. Supplied generator partials must be the exact
/// derivatives of the supplied generator; nothing checks this at build
/// time, but the forward-shooting solver's gradients are wrong otherwise.
pub struct ProblemBuilder {
    spec: ProblemSpec,
}

impl ProblemBuilder {
    pub fn new(name: &'static str, dim: usize, horizon: f64) -> Self {
        ProblemBuilder {
            spec: ProblemSpec {
                name,
                dim,
                horizon,
                initial_state: vec![0.0; dim],
                drift: Box::new(|_, _, out| out.fill(0.0)),
                diffusion: Box::new(|_, _, v, out| out.copy_from_slice(v)),
                diffusion_transpose: Box::new(|_, _, v, out| out.copy_from_slice(v)),
                generator: Box::new(|_, _, _, _| 0.0),
                generator_dy: Box::new(|_, _, _, _| 0.0),
                generator_dz: Box::new(|_, _, _, _, out| out.fill(0.0)),
                terminal: Box::new(|_| 0.0),
                terminal_gradient: Box::new(|_, out| out.fill(0.0)),
                reference_value: None,
                reference_provenance: ReferenceProvenance::Transcribed,
            },
        }
    }

    pub fn initial_state(mut self, xi: Vec<f64>) -> Self {
        self.spec.initial_state = xi;
        self
    }

    pub fn drift(mut self, mu: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.spec.drift = Box::new(mu);
        self
    }

    /// Diffusion as its action on vectors: `apply = sigma v`,
    /// `transpose = sigma^T v`.
    pub fn diffusion(
        mut self,
        apply: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        transpose: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.spec.diffusion = Box::new(apply);
        self.spec.diffusion_transpose = Box::new(transpose);
        self
    }

    /// Generator `f(t, x, y, z)` together with its exact partials in `y`
    /// and `z`.
    pub fn generator(
        mut self,
        f: impl Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync + 'static,
        df_dy: impl Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync + 'static,
        df_dz: impl Fn(f64, &[f64], f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.spec.generator = Box::new(f);
        self.spec.generator_dy = Box::new(df_dy);
        self.spec.generator_dz = Box::new(df_dz);
        self
    }

    /// Terminal condition `g` and its gradient.
    pub fn terminal(
        mut self,
        g: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad_g: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.spec.terminal = Box::new(g);
        self.spec.terminal_gradient = Box::new(grad_g);
        self
    }

    pub fn reference(mut self, value: f64, provenance: ReferenceProvenance) -> Self {
        self.spec.reference_value = Some(value);
        self.spec.reference_provenance = provenance;
        self
    }

    pub fn build(self) -> Result<ProblemSpec> {
        if self.spec.dim == 0 {
            return Err(Error::Config("problem dimension must be positive".into()));
        }
        if !(self.spec.horizon > 0.0) || !self.spec.horizon.is_finite() {
            return Err(Error::Config(format!(
                "time horizon must be positive and finite, got {}",
                self.spec.horizon
            )));
        }
        if self.spec.initial_state.len() != self.spec.dim {
            return Err(Error::Config(format!(
                "initial state has {} coordinates for a {}-dimensional problem",
                self.spec.initial_state.len(),
                self.spec.dim
            )));
        }
        Ok(self.spec)
    }
}

fn reference_at_100(dim: usize, value: f64) -> Option<f64> {
    (dim == 100).then_some(value)
}

/// Hamilton-Jacobi-Bellman control problem:
/// `mu = 0`, `sigma = sqrt(2) I`, `f = -|z|^2`, `g = ln((1 + |x|^2) / 2)`,
/// `xi = 0`, `T = 1`. Benchmark `u(0, xi) = 4.5901` at `d = 100`, and the
/// exact solution is recomputable by Monte Carlo through the log transform
/// `u(0, xi) = -ln E[exp(-g(xi + sqrt(2 T) Z))]`.
pub fn hjb_problem(dim: usize) -> ProblemSpec {
    let sqrt2 = std::f64::consts::SQRT_2;
    ProblemSpec {
        name: "hjb",
        dim,
        horizon: 1.0,
        initial_state: vec![0.0; dim],
        drift: Box::new(|_t, _x, out| out.fill(0.0)),
        diffusion: Box::new(move |_t, _x, v, out| {
            for (o, vi) in out.iter_mut().zip(v) {
                *o = sqrt2 * vi;
            }
        }),
        diffusion_transpose: Box::new(move |_t, _x, v, out| {
            for (o, vi) in out.iter_mut().zip(v) {
                *o = sqrt2 * vi;
            }
        }),
        generator: Box::new(|_t, _x, _y, z| -z.iter().map(|zi| zi * zi).sum::<f64>()),
        generator_dy: Box::new(|_t, _x, _y, _z| 0.0),
        generator_dz: Box::new(|_t, _x, _y, z, out| {
            for (o, zi) in out.iter_mut().zip(z) {
                *o = -2.0 * zi;
            }
        }),
        terminal: Box::new(|x| {
            let sq: f64 = x.iter().map(|xi| xi * xi).sum();
            ((1.0 + sq) / 2.0).ln()
        }),
        terminal_gradient: Box::new(|x, out| {
            let sq: f64 = x.iter().map(|xi| xi * xi).sum();
            let scale = 2.0 / (1.0 + sq);
            for (o, xi) in out.iter_mut().zip(x) {
                *o = scale * xi;
            }
        }),
        reference_value: reference_at_100(dim, 4.5901),
        reference_provenance: ReferenceProvenance::MonteCarloRecomputable,
    }
}

/// Allen-Cahn equation with cubic reaction term:
/// `mu = 0`, `sigma = sqrt(2) I` (so the second-order term is the plain
/// Laplacian), `f = y - y^3`, `g = 1 / (2 + (2/5) |x|^2)`, `xi = 0`,
/// `T = 3/10`. Benchmark `u(0, xi) = 0.052802` at `d = 100`.
pub fn allen_cahn_problem(dim: usize) -> ProblemSpec {
    let sqrt2 = std::f64::consts::SQRT_2;
    ProblemSpec {
        name: "allen_cahn",
        dim,
        horizon: 0.3,
        initial_state: vec![0.0; dim],
        drift: Box::new(|_t, _x, out| out.fill(0.0)),
        diffusion: Box::new(move |_t, _x, v, out| {
            for (o, vi) in out.iter_mut().zip(v) {
                *o = sqrt2 * vi;
            }
        }),
        diffusion_transpose: Box::new(move |_t, _x, v, out| {
            for (o, vi) in out.iter_mut().zip(v) {
                *o = sqrt2 * vi;
            }
        }),
        generator: Box::new(|_t, _x, y, _z| y - y * y * y),
        generator_dy: Box::new(|_t, _x, y, _z| 1.0 - 3.0 * y * y),
        generator_dz: Box::new(|_t, _x, _y, _z, out| out.fill(0.0)),
        terminal: Box::new(|x| {
            let sq: f64 = x.iter().map(|xi| xi * xi).sum();
            1.0 / (2.0 + 0.4 * sq)
        }),
        terminal_gradient: Box::new(|x, out| {
            let sq: f64 = x.iter().map(|xi| xi * xi).sum();
            let denom = 2.0 + 0.4 * sq;
            let scale = -0.8 / (denom * denom);
            for (o, xi) in out.iter_mut().zip(x) {
                *o = scale * xi;
            }
        }),
        reference_value: reference_at_100(dim, 0.052802),
        reference_provenance: ReferenceProvenance::Transcribed,
    }
}

const PRICING_MU: f64 = 0.06;
const PRICING_SIGMA: f64 = 0.2;
const PRICING_RL: f64 = 0.04;
const PRICING_RB: f64 = 0.06;

/// Option pricing with different borrowing and lending rates:
/// geometric dynamics `mu(x) = mu_bar x`, `sigma(x) v = sigma_bar (x .* v)`,
/// a rainbow payoff on the maximum coordinate, and a nonlinear funding term.
/// `xi = (100, ..., 100)`, `T = 1/2`. Benchmark `u(0, xi) = 21.299` at
/// `d = 100`.
pub fn pricing_diffrate_problem(dim: usize) -> ProblemSpec {
    ProblemSpec {
        name: "pricing_diffrate",
        dim,
        horizon: 0.5,
        initial_state: vec![100.0; dim],
        drift: Box::new(|_t, x, out| {
            for (o, xi) in out.iter_mut().zip(x) {
                *o = PRICING_MU * xi;
            }
        }),
        diffusion: Box::new(|_t, x, v, out| {
            for (o, (xi, vi)) in out.iter_mut().zip(x.iter().zip(v)) {
                *o = PRICING_SIGMA * xi * vi;
            }
        }),
        // The diffusion is diagonal, so sigma^T acts identically.
        diffusion_transpose: Box::new(|_t, x, v, out| {
            for (o, (xi, vi)) in out.iter_mut().zip(x.iter().zip(v)) {
                *o = PRICING_SIGMA * xi * vi;
            }
        }),
        generator: Box::new(|_t, _x, y, z| {
            let zsum: f64 = z.iter().sum();
            let funding_gap = zsum / PRICING_SIGMA - y;
            -PRICING_RL * y - (PRICING_MU - PRICING_RL) / PRICING_SIGMA * zsum
                + (PRICING_RB - PRICING_RL) * funding_gap.max(0.0)
        }),
        // At the funding kink (gap exactly zero) the inactive branch's
        // derivative is used.
        generator_dy: Box::new(|_t, _x, y, z| {
            let zsum: f64 = z.iter().sum();
            let active = zsum / PRICING_SIGMA - y > 0.0;
            -PRICING_RL - if active { PRICING_RB - PRICING_RL } else { 0.0 }
        }),
        generator_dz: Box::new(|_t, _x, y, z, out| {
            let zsum: f64 = z.iter().sum();
            let active = zsum / PRICING_SIGMA - y > 0.0;
            let slope = -(PRICING_MU - PRICING_RL) / PRICING_SIGMA
                + if active {
                    (PRICING_RB - PRICING_RL) / PRICING_SIGMA
                } else {
                    0.0
                };
            out.fill(slope);
        }),
        terminal: Box::new(|x| {
            let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (mx - 120.0).max(0.0) - 2.0 * (mx - 150.0).max(0.0)
        }),
        // Subgradient: one-hot at the lowest argmax index; at a payoff kink
        // the left slope applies (slope 0 at 120, slope 1 at 150).
        terminal_gradient: Box::new(|x, out| {
            out.fill(0.0);
            let mut arg = 0;
            let mut mx = f64::NEG_INFINITY;
            for (i, &xi) in x.iter().enumerate() {
                if xi > mx {
                    mx = xi;
                    arg = i;
                }
            }
            let slope = if mx > 150.0 {
                -1.0
            } else if mx > 120.0 {
                1.0
            } else {
                0.0
            };
            out[arg] = slope;
        }),
        reference_value: reference_at_100(dim, 21.299),
        reference_provenance: ReferenceProvenance::Transcribed,
    }
}

/// Monte Carlo reference for the HJB problem through the log transform:
/// `u(0, 0) = -ln E[exp(-g(sqrt(2 T) Z))]`.
pub fn hjb_reference_mc(
    dim: usize,
    samples: usize,
    rng: &crate::tensor::RngStream,
) -> Result<McEstimate> {
    let problem = hjb_problem(dim);
    let horizon = problem.horizon();
    log_transform_mc(&|x| problem.terminal(x), dim, horizon, samples, rng)
}

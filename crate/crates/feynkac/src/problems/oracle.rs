//! Monte Carlo reference through the exponential (log) transform.
//!
//! For problems with `mu = 0`, `sigma = sqrt(2) I`, and `f = -|z|^2`, the
//! solution admits the closed representation
//!
//! ```text
//! u(0, xi) = -ln E[ exp(-g(xi + sqrt(2 T) Z)) ],   Z ~ N(0, I_d),
//! ```
//!
//! which this module estimates by plain Monte Carlo. The estimator is
//! independent of every training component: it touches neither networks nor
//! path simulation, only the terminal condition and the random stream.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::RngStream;

/// Samples per deterministic sub-stream; fixed so results do not depend on
/// the worker count.
const CHUNK: usize = 4096;

/// Monte Carlo estimate of `-ln E[exp(-g(...))]`.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    /// The outer estimate `-ln(mean)`.
    pub value: f64,
    /// Sample mean of the inner expectation `E[exp(-g)]`.
    pub inner_mean: f64,
    /// Standard error of the inner mean (zero when `samples < 2`).
    pub std_error: f64,
    pub samples: usize,
}

impl McEstimate {
    /// Standard error of [`value`] by first-order propagation through the
    /// logarithm.
    ///
    /// [`value`]: McEstimate::value
    pub fn value_std_error(&self) -> f64 {
        self.std_error / self.inner_mean
    }
}

/// Estimates `-ln E[exp(-g(sqrt(2 T) Z))]` from `samples` independent draws.
///
/// Sampling is chunked over fixed-size deterministic sub-streams of `rng`
/// (chunk `c` uses `rng.substream(c)`), so the estimate is bit-identical for
/// any worker count. With `samples == 1` the estimate collapses to `g` at
/// the single sampled point; a constant `g == c` returns `c` up to floating
/// point with zero standard error contribution from the constant.
pub fn log_transform_mc(
    g: &(dyn Fn(&[f64]) -> f64 + Sync),
    dim: usize,
    horizon: f64,
    samples: usize,
    rng: &RngStream,
) -> Result<McEstimate> {
    if samples == 0 {
        return Err(Error::Contract(
            "log-transform Monte Carlo needs at least one sample".into(),
        ));
    }
    let scale = (2.0 * horizon).sqrt();
    let n_chunks = samples.div_ceil(CHUNK);
    let partials: Vec<(f64, f64)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut stream = rng.substream(c as u64);
            let count = CHUNK.min(samples - c * CHUNK);
            let mut x = vec![0.0; dim];
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..count {
                stream.fill_standard_normals(&mut x);
                for xi in &mut x {
                    *xi *= scale;
                }
                let w = (-g(&x)).exp();
                sum += w;
                sum_sq += w * w;
            }
            (sum, sum_sq)
        })
        .collect();
    // Fixed-order reduction over chunk index.
    let (sum, sum_sq) = partials
        .iter()
        .fold((0.0, 0.0), |(s, q), (cs, cq)| (s + cs, q + cq));
    if !sum.is_finite() || !sum_sq.is_finite() {
        return Err(Error::NonFinite(
            "log-transform Monte Carlo accumulator overflowed".into(),
        ));
    }
    let n = samples as f64;
    let mean = sum / n;
    let std_error = if samples > 1 {
        let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate {
        value: -mean.ln(),
        inner_mean: mean,
        std_error,
        samples,
    })
}

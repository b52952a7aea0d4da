//! Batched forward pass and the cache consumed by the backward pass.

use crate::error::{Error, Result};
use crate::net::params::{Activation, BatchNorm, Mode, SubnetParams};
use crate::net::{BN_EPSILON, BN_MOMENTUM};
use crate::tensor::{affine, Matrix};

/// Normalization constants used by one batch-norm layer during a pass:
/// either the batch statistics (train mode) or the running ones (eval mode).
#[derive(Debug, Clone)]
pub(crate) struct BnPass {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// `1 / sqrt(var + epsilon)`.
    pub inv_std: Vec<f64>,
}

/// Intermediate values of one forward pass, retained for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(crate) mode: Mode,
    /// Network input, `[batch x input_dim]`.
    pub(crate) x: Matrix,
    /// Normalized first-layer pre-activations (before scale/shift); a `0x0`
    /// placeholder when batch norm is disabled.
    pub(crate) xhat1: Matrix,
    /// First hidden activations.
    pub(crate) h1: Matrix,
    pub(crate) xhat2: Matrix,
    pub(crate) h2: Matrix,
    pub(crate) bn1: Option<BnPass>,
    pub(crate) bn2: Option<BnPass>,
}

impl ForwardCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch(&self) -> usize {
        self.x.rows()
    }
}

/// Per-column batch mean and biased variance.
fn batch_stats(a: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (rows, cols) = (a.rows(), a.cols());
    let mut mean = vec![0.0; cols];
    for r in 0..rows {
        for (m, v) in mean.iter_mut().zip(a.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    let mut var = vec![0.0; cols];
    for r in 0..rows {
        for (s, (v, m)) in var.iter_mut().zip(a.row(r).iter().zip(&mean)) {
            let d = v - m;
            *s += d * d;
        }
    }
    for s in &mut var {
        *s /= rows as f64;
    }
    (mean, var)
}

/// Applies batch norm (when configured) and the activation to one hidden
/// layer's affine output. Pure: running statistics are never written here.
fn hidden_block(
    act: Activation,
    a: Matrix,
    bn: Option<&BatchNorm>,
    mode: Mode,
) -> (Matrix, Matrix, Option<BnPass>) {
    match bn {
        None => {
            let mut h = a.clone();
            for v in h.as_mut_slice() {
                *v = act.apply(*v);
            }
            // Without normalization the backward pass never reads xhat.
            (Matrix::zeros(0, 0), h, None)
        }
        Some(bn) => {
            let (mean, var) = match mode {
                Mode::Train => batch_stats(&a),
                Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
            let (rows, cols) = (a.rows(), a.cols());
            let mut xhat = a;
            let mut h = Matrix::zeros(rows, cols);
            for r in 0..rows {
                let xr = xhat.row_mut(r);
                let hr = h.row_mut(r);
                for c in 0..cols {
                    let n = (xr[c] - mean[c]) * inv_std[c];
                    xr[c] = n;
                    hr[c] = act.apply(bn.gamma[c] * n + bn.beta[c]);
                }
            }
            (xhat, h, Some(BnPass { mean, var, inv_std }))
        }
    }
}

fn ema_update(bn: &mut BatchNorm, pass: &BnPass) {
    for (r, b) in bn.running_mean.iter_mut().zip(&pass.mean) {
        *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
    }
    for (r, b) in bn.running_var.iter_mut().zip(&pass.var) {
        *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
    }
}

impl SubnetParams {
    /// Pure forward pass; train mode computes batch statistics but does not
    /// write the running ones back.
    pub(crate) fn forward_core(&self, x: &Matrix, mode: Mode) -> Result<(Matrix, ForwardCache)> {
        if mode == Mode::Train && x.rows() < 2 {
            return Err(Error::BatchTooSmall { got: x.rows() });
        }
        let act = self.arch.activation;
        let a1 = affine(&self.w1, x, &self.b1)?;
        let (xhat1, h1, bn1) = hidden_block(act, a1, self.bn1.as_ref(), mode);
        let a2 = affine(&self.w2, &h1, &self.b2)?;
        let (xhat2, h2, bn2) = hidden_block(act, a2, self.bn2.as_ref(), mode);
        let out = affine(&self.w3, &h2, &self.b3)?;
        let cache = ForwardCache {
            mode,
            x: x.clone(),
            xhat1,
            h1,
            xhat2,
            h2,
            bn1,
            bn2,
        };
        Ok((out, cache))
    }

    /// Forward pass retaining intermediates. Train mode requires at least
    /// two samples (batch statistics are undefined otherwise) and updates
    /// the running statistics; eval mode is pure.
    pub fn forward_cached(&mut self, x: &Matrix, mode: Mode) -> Result<(Matrix, ForwardCache)> {
        let (out, cache) = self.forward_core(x, mode)?;
        if mode == Mode::Train {
            if let (Some(bn), Some(pass)) = (self.bn1.as_mut(), cache.bn1.as_ref()) {
                ema_update(bn, pass);
            }
            if let (Some(bn), Some(pass)) = (self.bn2.as_mut(), cache.bn2.as_ref()) {
                ema_update(bn, pass);
            }
        }
        Ok((out, cache))
    }

    /// Forward pass without a cache; see [`forward_cached`] for the mode
    /// semantics.
    ///
    /// [`forward_cached`]: SubnetParams::forward_cached
    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        self.forward_cached(x, mode).map(|(out, _)| out)
    }

    /// Pure evaluation-mode forward pass.
    pub fn forward_eval(&self, x: &Matrix) -> Result<Matrix> {
        self.forward_core(x, Mode::Eval).map(|(out, _)| out)
    }
}

//! Reverse-mode gradients: parameters and inputs.
//!
//! `backward` is the exact adjoint of `forward_core` for the mode recorded
//! in the cache; in train mode that includes the coupling of every sample
//! through the batch statistics.  `input_gradient` deliberately does not:
//! normalization statistics are frozen constants during input-gradient
//! sweeps, which makes the result a per-sample quantity (the gradient
//! features consumed by the generator must not depend on which other paths
//! share a batch).

use crate::error::{Error, Result};
use crate::net::forward::{BnPass, ForwardCache};
use crate::net::params::{Activation, BatchNorm, Mode, SubnetParams, SubnetStack};
use crate::tensor::Matrix;

/// Gradients for one subnet, mirroring the trainable fields of
/// [`SubnetParams`]. Batch-norm gradients are empty when the layer is
/// disabled.
#[derive(Debug, Clone)]
pub struct SubnetGrads {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub gamma1: Vec<f64>,
    pub beta1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub beta2: Vec<f64>,
    pub w3: Matrix,
    pub b3: Vec<f64>,
}

impl SubnetGrads {
    pub fn zeros_like(params: &SubnetParams) -> Self {
        let bn_len = if params.arch.batch_norm {
            params.arch.hidden_dim
        } else {
            0
        };
        SubnetGrads {
            w1: Matrix::zeros(params.w1.rows(), params.w1.cols()),
            b1: vec![0.0; params.b1.len()],
            gamma1: vec![0.0; bn_len],
            beta1: vec![0.0; bn_len],
            w2: Matrix::zeros(params.w2.rows(), params.w2.cols()),
            b2: vec![0.0; params.b2.len()],
            gamma2: vec![0.0; bn_len],
            beta2: vec![0.0; bn_len],
            w3: Matrix::zeros(params.w3.rows(), params.w3.cols()),
            b3: vec![0.0; params.b3.len()],
        }
    }

    /// Adds `other`, entry by entry.
    pub fn accumulate(&mut self, other: &SubnetGrads) {
        let add = |a: &mut [f64], b: &[f64]| {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        };
        add(self.w1.as_mut_slice(), other.w1.as_slice());
        add(&mut self.b1, &other.b1);
        add(&mut self.gamma1, &other.gamma1);
        add(&mut self.beta1, &other.beta1);
        add(self.w2.as_mut_slice(), other.w2.as_slice());
        add(&mut self.b2, &other.b2);
        add(&mut self.gamma2, &other.gamma2);
        add(&mut self.beta2, &other.beta2);
        add(self.w3.as_mut_slice(), other.w3.as_slice());
        add(&mut self.b3, &other.b3);
    }

    /// Appends in the same stable order as [`SubnetParams::flatten_into`].
    pub(crate) fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w1.as_slice());
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.gamma1);
        out.extend_from_slice(&self.beta1);
        out.extend_from_slice(self.w2.as_slice());
        out.extend_from_slice(&self.b2);
        out.extend_from_slice(&self.gamma2);
        out.extend_from_slice(&self.beta2);
        out.extend_from_slice(self.w3.as_slice());
        out.extend_from_slice(&self.b3);
    }
}

/// Gradient of a scalar loss with respect to every trainable in a stack.
#[derive(Debug, Clone)]
pub struct StackGrads {
    pub subnets: Vec<SubnetGrads>,
    pub u0: Option<f64>,
    pub grad0: Option<Vec<f64>>,
}

impl StackGrads {
    pub fn zeros_like(stack: &SubnetStack) -> Self {
        StackGrads {
            subnets: stack
                .subnets
                .iter()
                .map(SubnetGrads::zeros_like)
                .collect(),
            u0: stack.u0.map(|_| 0.0),
            grad0: stack.grad0.as_ref().map(|g| vec![0.0; g.len()]),
        }
    }

    /// Flat gradient vector aligned with [`SubnetStack::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.subnets {
            g.flatten_into(&mut out);
        }
        if let Some(u0) = self.u0 {
            out.push(u0);
        }
        if let Some(g0) = &self.grad0 {
            out.extend_from_slice(g0);
        }
        out
    }
}

/// Column sums of `m`.
fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (s, v) in out.iter_mut().zip(m.row(r)) {
            *s += v;
        }
    }
    out
}

/// `dn = dh .* act'(h)` computed from the activation outputs.
fn activation_backward(act: Activation, dh: &mut Matrix, h: &Matrix) {
    for (d, o) in dh.as_mut_slice().iter_mut().zip(h.as_slice()) {
        *d *= act.derivative_from_output(*o);
    }
}

/// Backward through one batch-norm layer. Returns `(dgamma, dbeta)` and
/// rewrites `dn` into the gradient with respect to the affine output.
///
/// Train mode applies the full batch-statistic coupling
/// `da = (gamma / s) * (dn - mean(dn) - xhat * mean(dn .* xhat))`;
/// eval mode is the per-feature affine `da = dn * gamma / s`.
fn bn_backward(
    bn: &BatchNorm,
    pass: &BnPass,
    xhat: &Matrix,
    dn: &mut Matrix,
    mode: Mode,
) -> (Vec<f64>, Vec<f64>) {
    let (rows, cols) = (dn.rows(), dn.cols());
    let b = rows as f64;
    let mut dgamma = vec![0.0; cols];
    let mut dbeta = vec![0.0; cols];
    for r in 0..rows {
        for (c, d) in dn.row(r).iter().enumerate() {
            dgamma[c] += d * xhat.get(r, c);
            dbeta[c] += d;
        }
    }
    match mode {
        Mode::Train => {
            // dbeta and dgamma double as the column sums needed below.
            for r in 0..rows {
                for c in 0..cols {
                    let d = dn.get(r, c);
                    let centered = d - dbeta[c] / b - xhat.get(r, c) * dgamma[c] / b;
                    dn.set(r, c, bn.gamma[c] * pass.inv_std[c] * centered);
                }
            }
        }
        Mode::Eval => {
            for r in 0..rows {
                for c in 0..cols {
                    dn.set(r, c, dn.get(r, c) * bn.gamma[c] * pass.inv_std[c]);
                }
            }
        }
    }
    (dgamma, dbeta)
}

impl SubnetParams {
    /// Propagates `dout` (gradient of a scalar loss with respect to the
    /// network output, `[batch x output_dim]`) back through a cached forward
    /// pass. Returns the parameter gradients and the gradient with respect
    /// to the input batch.
    pub fn backward(&self, cache: &ForwardCache, dout: &Matrix) -> Result<(SubnetGrads, Matrix)> {
        if dout.rows() != cache.batch() || dout.cols() != self.arch.output_dim {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left_rows: cache.batch(),
                left_cols: self.arch.output_dim,
                right_rows: dout.rows(),
                right_cols: dout.cols(),
            });
        }
        let act = self.arch.activation;
        let mut grads = SubnetGrads::zeros_like(self);

        grads.w3 = dout.mul_tn(&cache.h2)?;
        grads.b3 = column_sums(dout);
        let mut dn2 = dout.mul_nn(&self.w3)?;
        activation_backward(act, &mut dn2, &cache.h2);
        if let (Some(bn), Some(pass)) = (&self.bn2, &cache.bn2) {
            let (dg, db) = bn_backward(bn, pass, &cache.xhat2, &mut dn2, cache.mode);
            grads.gamma2 = dg;
            grads.beta2 = db;
        }
        let da2 = dn2;

        grads.w2 = da2.mul_tn(&cache.h1)?;
        grads.b2 = column_sums(&da2);
        let mut dn1 = da2.mul_nn(&self.w2)?;
        activation_backward(act, &mut dn1, &cache.h1);
        if let (Some(bn), Some(pass)) = (&self.bn1, &cache.bn1) {
            let (dg, db) = bn_backward(bn, pass, &cache.xhat1, &mut dn1, cache.mode);
            grads.gamma1 = dg;
            grads.beta1 = db;
        }
        let da1 = dn1;

        grads.w1 = da1.mul_tn(&cache.x)?;
        grads.b1 = column_sums(&da1);
        let dx = da1.mul_nn(&self.w1)?;
        Ok((grads, dx))
    }

    /// Gradient of the scalar network output with respect to each input, one
    /// row per sample: `[batch x input_dim]`.
    ///
    /// Only defined for scalar-output networks. Normalization statistics are
    /// frozen during the sweep in both modes (train mode computes them from
    /// the batch first), so each row depends on that sample alone given the
    /// statistics; running statistics are never updated.
    pub fn input_gradient(&self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        if self.arch.output_dim != 1 {
            return Err(Error::Contract(format!(
                "input_gradient requires a scalar-output network, got output_dim {}",
                self.arch.output_dim
            )));
        }
        let (_, cache) = self.forward_core(x, mode)?;
        let act = self.arch.activation;
        let batch = x.rows();

        // Seed with w3 (d out / d h2 is the same for every sample), then walk
        // back treating batch norm as a fixed per-feature scale.
        let mut dh2 = Matrix::zeros(batch, self.arch.hidden_dim);
        for r in 0..batch {
            dh2.row_mut(r).copy_from_slice(self.w3.row(0));
        }
        activation_backward(act, &mut dh2, &cache.h2);
        if let (Some(bn), Some(pass)) = (&self.bn2, &cache.bn2) {
            scale_columns(&mut dh2, &bn.gamma, &pass.inv_std);
        }
        let mut dh1 = dh2.mul_nn(&self.w2)?;
        activation_backward(act, &mut dh1, &cache.h1);
        if let (Some(bn), Some(pass)) = (&self.bn1, &cache.bn1) {
            scale_columns(&mut dh1, &bn.gamma, &pass.inv_std);
        }
        dh1.mul_nn(&self.w1)
    }
}

fn scale_columns(m: &mut Matrix, gamma: &[f64], inv_std: &[f64]) {
    for r in 0..m.rows() {
        for (c, v) in m.row_mut(r).iter_mut().enumerate() {
            *v *= gamma[c] * inv_std[c];
        }
    }
}

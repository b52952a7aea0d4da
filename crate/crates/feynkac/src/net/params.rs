//! Network parameters, initialization, and the flat parameter view.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, RngStream};

/// Forward-pass mode. Train mode normalizes with batch statistics and
/// updates the running ones; eval mode reads the running statistics and has
/// no side effects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Hidden-layer activation. `Identity` exists for test configurations that
/// need an exactly linear network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the activation output (valid for all
    /// three variants). ReLU uses subgradient 0 at the kink.
    #[inline]
    pub(crate) fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
            Activation::Identity => 1.0,
        }
    }
}

/// Shape and feature switches shared by every subnet in a stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
    /// Batch normalization after each hidden affine layer. Disabled only in
    /// test configurations.
    pub batch_norm: bool,
}

impl Architecture {
    /// Scalar-output network for a `d`-dimensional state: `d -> d+10 ->
    /// d+10 -> 1`.
    pub fn value_net(d: usize) -> Self {
        Architecture {
            input_dim: d,
            hidden_dim: d + 10,
            output_dim: 1,
            activation: Activation::Relu,
            batch_norm: true,
        }
    }

    /// Gradient-output network: `d -> d+10 -> d+10 -> d`.
    pub fn gradient_net(d: usize) -> Self {
        Architecture {
            output_dim: d,
            ..Architecture::value_net(d)
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_batch_norm(mut self, enabled: bool) -> Self {
        self.batch_norm = enabled;
        self
    }

    /// Trainable scalars in one subnet.
    pub fn params_per_subnet(&self) -> usize {
        let (d, h, o) = (self.input_dim, self.hidden_dim, self.output_dim);
        let bn = if self.batch_norm { 4 * h } else { 0 };
        h * d + h + h * h + h + o * h + o + bn
    }
}

/// Batch-normalization unit: trainable scale/shift plus running statistics.
/// The running variance stays strictly positive (it starts at one and moves
/// by convex combination with non-negative batch variances).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    pub(crate) fn identity(width: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

/// Parameters of one per-time-step network.
#[derive(Debug, Clone, PartialEq)]
pub struct SubnetParams {
    pub arch: Architecture,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub bn1: Option<BatchNorm>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub bn2: Option<BatchNorm>,
    pub w3: Matrix,
    pub b3: Vec<f64>,
}

impl SubnetParams {
    /// Initializes one subnet: weights are zero-mean normals with variance
    /// `1 / fan_in`, biases zero, batch-norm scale one / shift zero, running
    /// statistics `(0, 1)`. Weight entries are drawn row-major, layer by
    /// layer (`w1`, `w2`, `w3`), so initialization is a pure function of the
    /// stream position.
    pub fn init(rng: &mut RngStream, arch: Architecture) -> Self {
        let (d, h, o) = (arch.input_dim, arch.hidden_dim, arch.output_dim);
        let scaled = |rng: &mut RngStream, rows: usize, cols: usize| {
            let scale = 1.0 / (cols as f64).sqrt();
            let mut data = rng.standard_normals(rows * cols);
            for v in &mut data {
                *v *= scale;
            }
            Matrix::from_vec(rows, cols, data).expect("init shape is consistent")
        };
        let bn = |on: bool| if on { Some(BatchNorm::identity(h)) } else { None };
        SubnetParams {
            arch,
            w1: scaled(rng, h, d),
            b1: vec![0.0; h],
            bn1: bn(arch.batch_norm),
            w2: scaled(rng, h, h),
            b2: vec![0.0; h],
            bn2: bn(arch.batch_norm),
            w3: scaled(rng, o, h),
            b3: vec![0.0; o],
        }
    }

    /// Appends the trainable parameters in the stable flat order:
    /// `w1, b1, gamma1, beta1, w2, b2, gamma2, beta2, w3, b3`.
    pub(crate) fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w1.as_slice());
        out.extend_from_slice(&self.b1);
        if let Some(bn) = &self.bn1 {
            out.extend_from_slice(&bn.gamma);
            out.extend_from_slice(&bn.beta);
        }
        out.extend_from_slice(self.w2.as_slice());
        out.extend_from_slice(&self.b2);
        if let Some(bn) = &self.bn2 {
            out.extend_from_slice(&bn.gamma);
            out.extend_from_slice(&bn.beta);
        }
        out.extend_from_slice(self.w3.as_slice());
        out.extend_from_slice(&self.b3);
    }

    pub(crate) fn unflatten_from(&mut self, src: &[f64], pos: &mut usize) {
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&src[*pos..*pos + dst.len()]);
            *pos += dst.len();
        };
        take(self.w1.as_mut_slice());
        take(&mut self.b1);
        if let Some(bn) = &mut self.bn1 {
            take(&mut bn.gamma);
            take(&mut bn.beta);
        }
        take(self.w2.as_mut_slice());
        take(&mut self.b2);
        if let Some(bn) = &mut self.bn2 {
            take(&mut bn.gamma);
            take(&mut bn.beta);
        }
        take(self.w3.as_mut_slice());
        take(&mut self.b3);
    }
}

/// One network per interior grid time, plus the optional scalar head used by
/// the forward-shooting solver (`u0` approximates `u(0, xi)` directly and
/// `grad0` its spatial gradient at the initial point).
#[derive(Debug, Clone, PartialEq)]
pub struct SubnetStack {
    pub arch: Architecture,
    pub subnets: Vec<SubnetParams>,
    pub u0: Option<f64>,
    pub grad0: Option<Vec<f64>>,
}

impl SubnetStack {
    /// Stack of `n_subnets` independently initialized subnets, no head.
    pub fn init(rng: &mut RngStream, arch: Architecture, n_subnets: usize) -> Self {
        let subnets = (0..n_subnets)
            .map(|_| SubnetParams::init(rng, arch))
            .collect();
        SubnetStack {
            arch,
            subnets,
            u0: None,
            grad0: None,
        }
    }

    /// Stack with the forward-shooting head. `u0` and each entry of `grad0`
    /// are drawn uniformly from `init_range` after the subnet weights, in
    /// that order.
    pub fn init_with_head(
        rng: &mut RngStream,
        arch: Architecture,
        n_subnets: usize,
        init_range: (f64, f64),
    ) -> Self {
        let mut stack = SubnetStack::init(rng, arch, n_subnets);
        stack.u0 = Some(rng.uniform_in(init_range.0, init_range.1));
        let d = arch.input_dim;
        stack.grad0 = Some((0..d).map(|_| rng.uniform_in(init_range.0, init_range.1)).collect());
        stack
    }

    pub fn n_subnets(&self) -> usize {
        self.subnets.len()
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        let head = match (&self.u0, &self.grad0) {
            (Some(_), Some(g)) => 1 + g.len(),
            (Some(_), None) => 1,
            (None, Some(g)) => g.len(),
            (None, None) => 0,
        };
        self.subnets.len() * self.arch.params_per_subnet() + head
    }

    /// Flat view of every trainable parameter: subnets in stack order (each
    /// in the order documented on [`SubnetParams::flatten_into`]), then the
    /// head (`u0`, `grad0`) when present. Running statistics are not
    /// trainable and are excluded.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_count());
        for s in &self.subnets {
            s.flatten_into(&mut out);
        }
        if let Some(u0) = self.u0 {
            out.push(u0);
        }
        if let Some(g0) = &self.grad0 {
            out.extend_from_slice(g0);
        }
        out
    }

    /// Writes a flat parameter vector back; exact inverse of [`flatten`].
    ///
    /// [`flatten`]: SubnetStack::flatten
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.trainable_count() {
            return Err(Error::Contract(format!(
                "flat parameter vector has length {}, stack holds {} trainables",
                flat.len(),
                self.trainable_count()
            )));
        }
        let mut pos = 0;
        for s in &mut self.subnets {
            s.unflatten_from(flat, &mut pos);
        }
        if let Some(u0) = &mut self.u0 {
            *u0 = flat[pos];
            pos += 1;
        }
        if let Some(g0) = &mut self.grad0 {
            let len = g0.len();
            g0.copy_from_slice(&flat[pos..pos + len]);
        }
        Ok(())
    }
}

//! Per-time-step regression networks.
//!
//! Every interior grid time gets its own small feed-forward network
//! (time is never a network input): `input -> affine -> batch norm ->
//! activation -> affine -> batch norm -> activation -> affine -> output`.
//! Value networks map to a scalar, gradient networks map to `input_dim`
//! outputs.
//!
//! Three differentiation services are provided, all exact (no numerical
//! differentiation anywhere in the training path):
//!
//! * [`SubnetParams::forward`] - batched forward pass; train mode uses batch
//!   statistics and updates the running ones, eval mode is pure.
//! * [`SubnetParams::input_gradient`] - gradient of a scalar-output network
//!   with respect to its input, holding normalization statistics constant.
//! * [`SubnetParams::backward`] - reverse-mode parameter gradients from a
//!   cached forward pass, including the batch-statistic coupling terms in
//!   train mode.

mod backward;
mod forward;
mod params;

pub use backward::{StackGrads, SubnetGrads};
pub use forward::ForwardCache;
pub use params::{Activation, Architecture, BatchNorm, Mode, SubnetParams, SubnetStack};

/// Batch-norm variance stabilizer.
pub const BN_EPSILON: f64 = 1e-6;

/// Exponential moving average weight on the previous running statistic.
pub const BN_MOMENTUM: f64 = 0.99;

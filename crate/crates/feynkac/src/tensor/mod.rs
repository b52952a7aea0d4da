//! Dense row-major matrices and deterministic random streams.
//!
//! These are the only numeric primitives the rest of the crate builds on.
//! Everything is `f64`; the training workloads here are small and stiff
//! enough that the extra precision is worth more than the bandwidth.

mod matrix;
mod rng;

pub use matrix::{affine, Matrix};
pub use rng::{mix_seed, RngStream};

//! Deep stochastic solvers for high-dimensional semilinear parabolic PDEs.
//!
//! The library estimates `u(0, xi)` for terminal-value problems of the form
//!
//! ```text
//! du/dt + (1/2) Tr(sigma sigma^T Hess_x u) + grad_x u . mu + f(t, x, u, sigma^T grad_x u) = 0,
//! u(T, x) = g(x),
//! ```
//!
//! by simulating forward paths of the associated diffusion and training one
//! small feed-forward network per interior time step.  Four training schemes
//! are provided (see [`solvers`]):
//!
//! * `dbsde`  - forward backward-SDE shooting with networks for the gradient,
//! * `ds`     - step-by-step regression on one-step targets,
//! * `ds_gt`  - the same targets trained jointly under a summed loss,
//! * `dfk_gt` - jointly trained recursive targets that telescope to a
//!   Feynman-Kac style estimator.
//!
//! Determinism is a design requirement: every random quantity derives from a
//! counter-based stream keyed by `(seed, stream id)`, so results are
//! bit-identical across runs, platforms, and worker counts.

pub mod bench;
pub mod checkpoint;
pub mod error;
pub mod net;
pub mod optim;
pub mod problems;
pub mod sde;
pub mod solvers;
pub mod tensor;

pub use error::{Error, Result};

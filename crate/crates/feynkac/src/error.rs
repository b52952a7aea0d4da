//! Crate-wide error type.
//!
//! Contract violations (shape mismatches, invalid configuration) and numerical
//! aborts (non-finite values) are kept as distinct variants so the CLI can map
//! them to different exit codes.

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or vector shapes do not satisfy an operation's contract.
    #[error("shape mismatch in {op}: left operand is {left_rows}x{left_cols}, right operand is {right_rows}x{right_cols}")]
    ShapeMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    /// Batch statistics need at least two samples.
    #[error("batch too small for batch statistics: got {got} samples, need at least 2")]
    BatchTooSmall { got: usize },

    /// A structural precondition was violated (sizes, index ranges, modes).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value appeared where the pipeline requires finite numbers.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Run or solver configuration is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that signal a numerical abort rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    /// An invalid configuration; the message lists every violated constraint.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed or inconsistent data (corpus files, example records).
    #[error("data error: {0}")]
    Data(String),

    /// A sequencing violation, e.g. creating a second unfrozen patch.
    #[error("sequencing error: {0}")]
    Sequencing(String),

    /// Input sequence exceeds the model's position table.
    #[error("sequence of length {len} exceeds max_len {max_len}; refusing to truncate")]
    SequenceTooLong { len: usize, max_len: usize },

    /// A gradient blew up; names the offending parameter.
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    /// A loss probe produced NaN/Inf during a finite-difference sweep.
    #[error("non-finite loss while probing parameter {param_index} coordinate {coord}")]
    NonFiniteLoss { param_index: usize, coord: usize },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Error type shared across the crate.

use thiserror::Error;

/// Errors raised by dataset handling, oracles, and solvers.
#[derive(Debug, Error)]
pub enum WdroError {
    /// Malformed input data (position is 1-based).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Operation applied to the wrong task kind (classification vs regression).
    #[error("task error: {0}")]
    Task(String),

    /// Vector length does not match the dataset dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },

    /// Invalid parameter or query outside the admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Requested operation has no implementation for this configuration.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Sampling budget too small to cover every nonempty cell.
    #[error("budget too small: need at least {min_feasible} samples (one per nonempty cell)")]
    Budget { min_feasible: usize },

    /// Invalid configuration document.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl WdroError {
    /// Process exit code for the CLI: 2 for data errors, 3 for
    /// numerical/domain errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            WdroError::Parse { .. }
            | WdroError::Task(_)
            | WdroError::Dim { .. }
            | WdroError::Config(_)
            | WdroError::Io(_) => 2,
            WdroError::Domain(_) | WdroError::Unsupported(_) | WdroError::Budget { .. } => 3,
        }
    }
}

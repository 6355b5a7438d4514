use std::path::PathBuf;

use crate::masking::MaskSet;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite state at step {step}: {value}")]
    NonFinite { step: usize, value: f64 },

    #[error("integrator unstable at t = {time} us (|a| = {value})")]
    Unstable { time: f64, value: f64 },

    #[error("training diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        /// Parameters from the last iteration whose loss was finite.
        last_good: Box<MaskSet>,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{0}")]
    MissingArtifact(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code: 1 for validation failures, 2 for configuration
    /// errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParams(_) | Error::MissingArtifact(_) => 2,
            _ => 1,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by model construction, tensor kernels and the training pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or incompatible shapes. Maps to exit code 1.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an API contract (non-scalar loss, unknown variable, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("empty dataset split: {0}")]
    EmptySplit(String),

    #[error("image error for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Process exit code for the command-line front end: 1 for configuration
    /// problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

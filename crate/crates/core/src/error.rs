use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// A precondition on an operation's arguments was violated.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// An operation was called in a mode that does not support it.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// Two-parameter Weibull fit on samples that carry no spread.
    #[error("degenerate Weibull fit: {0}")]
    DegenerateFit(String),

    #[error("manifest {path}: {} violation(s):\n  {}", violations.len(), violations.join("\n  "))]
    Manifest {
        path: PathBuf,
        violations: Vec<String>,
    },

    #[error("checkpoint keys do not match the model (missing: [{}], unexpected: [{}], shape mismatch: [{}])",
        missing.join(", "), unexpected.join(", "), mismatched.join(", "))]
    CheckpointKeys {
        missing: Vec<String>,
        unexpected: Vec<String>,
        mismatched: Vec<String>,
    },

    #[error("cannot load checkpoint {path}: {reason}")]
    CheckpointLoad { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from user input (configuration, files, usage)
    /// rather than a numeric failure while running.
    pub fn is_user_error(&self) -> bool {
        !matches!(
            self,
            Error::Numeric(_) | Error::DegenerateFit(_) | Error::Tensor(_)
        )
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum SpnError {
    /// Tensor shapes that cannot be combined.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An invalid model, layer or schedule configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Bad caller input (labels out of range, k too large, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Misuse of the API, e.g. backward from a non-scalar.
    #[error("usage error: {0}")]
    Usage(String),

    /// Training diverged or received non-finite values.
    #[error("training error: {0}")]
    Training(String),

    /// A verification harness found a mismatch.
    #[error("verification error: {0}")]
    Verification(String),

    /// Malformed file contents.
    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SpnError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SpnError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, msg: impl Into<String>) -> Self {
        SpnError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = SpnError> = std::result::Result<T, E>;

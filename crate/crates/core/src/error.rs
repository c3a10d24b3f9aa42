use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by the library.
///
/// The CLI maps these onto process exit codes: `Config` -> 2, `Io` -> 3,
/// `DataIntegrity` -> 4, `Numeric` -> 5; everything else is reported as a
/// generic failure.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    #[error("shape mismatch in {op}: left {left:?}, right {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// A numeric guard tripped (non-finite value, non-stochastic matrix, ...).
    #[error("numeric error in {context}: {message}")]
    Numeric {
        context: &'static str,
        message: String,
    },

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Invalid input data (bad shapes, out-of-range values, too few rows).
    #[error("input error: {0}")]
    Input(String),

    /// API misuse (backward on a non-scalar, missing capture, SEP query, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// Internal bookkeeping went inconsistent; indicates a bug.
    #[error("internal error: {0}")]
    Internal(String),

    /// Train/test fold overlap or duplicate record ids.
    #[error("data integrity error: {0}")]
    DataIntegrity(String),

    /// I/O failure, always carrying the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed on-disk artifact (manifest, checkpoint header, CSV, ...).
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

use thiserror::Error;

/// Errors raised by the library. Variants map one-to-one onto CLI exit codes
/// (see [`MsbError::exit_code`]).
#[derive(Debug, Error)]
pub enum MsbError {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("capacity exceeded: {what} needs {needed} entries, cap is {cap}")]
    Capacity {
        what: String,
        needed: usize,
        cap: usize,
    },

    #[error("solver did not converge: {0}")]
    NotConverged(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl MsbError {
    pub fn validation(msg: impl Into<String>) -> Self {
        MsbError::Validation(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        MsbError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the `msb` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            MsbError::NotConverged(_) => 3,
            MsbError::Capacity { .. } => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, MsbError>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, M3vError>;

#[derive(Debug, Error)]
pub enum M3vError {
    #[error("shape mismatch in {op}: left {left:?}, right {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(String),
}

impl M3vError {
    pub fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        M3vError::Shape { op, left, right }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        M3vError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for internal invariant violations, 1 for everything
    /// attributable to user input or the environment.
    pub fn exit_code(&self) -> i32 {
        match self {
            M3vError::NonFiniteLoss { .. } | M3vError::State(_) => 2,
            _ => 1,
        }
    }
}

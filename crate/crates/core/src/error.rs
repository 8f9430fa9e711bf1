use std::path::PathBuf;

/// Errors raised anywhere in the clustering pipeline.
#[derive(Debug, thiserror::Error)]
pub enum PhcError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error(
        "solver did not converge after {iterations} iterations (kkt violation {kkt_violation:e})"
    )]
    NoConvergence {
        iterations: usize,
        kkt_violation: f64,
    },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl PhcError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PhcError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical machinery rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            PhcError::NoConvergence { .. } | PhcError::UndefinedMetric(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, PhcError>;

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the SBIM library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Ingest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite {what} at coordinate {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn ingest(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Ingest {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Whether the error stems from numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::Sampler(_) | Error::NoConvergence(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

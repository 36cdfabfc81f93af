use std::path::PathBuf;

use thiserror::Error;

use crate::se2::Pose2;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what} in {path}: {message}")]
    Format {
        what: &'static str,
        path: PathBuf,
        message: String,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("sample at pixel ({u:.3}, {v:.3}) is outside the scan or masked")]
    InvalidSample { u: f64, v: f64 },
    #[error("normal equations are rank deficient; under-constrained states: {states:?}")]
    RankDeficient { states: Vec<usize> },
    #[error("insufficient overlap: {found} valid residuals, need at least {required}")]
    InsufficientOverlap { found: usize, required: usize },
    #[error("localization diverged after {iterations} iterations at {pose}")]
    Diverged { iterations: usize, pose: Pose2 },
    #[error("problem too large for the joint solver: {0}")]
    TooLarge(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: &'static str, path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

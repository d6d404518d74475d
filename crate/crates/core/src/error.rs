use std::path::PathBuf;

use crate::popmodel::ValidationReport;

/// Errors raised anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("axis collision: target and conditioning axis are both {0:?}")]
    AxisCollision(crate::probkit::Axis),

    #[error("absolute continuity violated at cell {index}: p = {p}, q = 0")]
    NotAbsolutelyContinuous { index: usize, p: f64 },

    #[error("conditioning on agent {0} which has no interactions")]
    DegenerateConditioning(usize),

    #[error("population failed validation:\n{0}")]
    Validation(ValidationReport),

    #[error("usage: {0}")]
    Usage(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// True for errors caused by malformed input data rather than bad usage.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::InvalidDistribution(_)
                | Error::DegenerateConditioning(_)
                | Error::Parse { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

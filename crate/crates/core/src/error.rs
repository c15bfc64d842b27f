use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the solver library and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("row index {index} out of range for a system with {m} equations")]
    IndexOutOfRange { index: usize, m: usize },

    #[error("dimension mismatch: expected length {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("all residuals are zero; nothing to select")]
    AllResidualsZero,

    #[error("degenerate block: every gradient row in the block vanishes")]
    DegenerateBlock,

    #[error("degenerate direction: denominator {denominator:e} underflows with nonzero numerator")]
    DegenerateDirection { denominator: f64 },

    #[error("gradient row {index} has norm {norm:e}, too small to project onto")]
    ZeroGradientRow { index: usize, norm: f64 },

    #[error("ground truth has zero norm")]
    ZeroTruth,

    #[error("no sample pair with a nonzero denominator")]
    NoValidPairs,

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed instance file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}

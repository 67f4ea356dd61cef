use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Input outside the domain of a distance-generating function.
    #[error("domain violation: {0}")]
    Domain(String),

    #[error("point is not feasible (violation {violation:e})")]
    Infeasible { violation: f64 },

    /// A mirror step produced a non-finite or infeasible point.
    #[error("mirror step failed: {0}")]
    Solver(String),

    #[error("corrupt quantized message: {0}")]
    CorruptMessage(String),

    #[error("network assumption violated: {0}")]
    Network(String),

    #[error("rate fit refused: {0}")]
    RateFit(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("plot rendering failed: {0}")]
    Plot(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

use thiserror::Error;

use crate::dataset::ClassId;

/// Errors produced by the denoisers, guidance rules, sampler and metrics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid noise level {0}: sigma must be > 0")]
    InvalidNoiseLevel(f64),

    #[error("shape mismatch: expected {expected} components, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("denoiser is class-conditional but no class was supplied")]
    MissingCondition,

    #[error("class {0} has no points in the dataset")]
    UnknownClass(ClassId),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error(
        "error-prone denoiser requires delta > 0 (got {0}); use the optimal denoiser for delta = 0"
    )]
    InvalidDelta(f64),

    #[error(
        "guidance direction is degenerate (|eps_pos - eps_neg| = {0:e}); optimal weight undefined"
    )]
    DegenerateDirection(f64),

    #[error("incompatible guidance rules: {0}")]
    IncompatibleRules(String),

    #[error("incompatible denoiser: {0}")]
    IncompatibleDenoiser(String),

    #[error("window count {0} is not a perfect square")]
    NonSquareWindowCount(usize),

    #[error("non-integral stride: ({extent} - {window}) is not divisible by {gaps} (grid H={extent}, k={window}, N={windows})")]
    NonIntegralStride {
        extent: usize,
        window: usize,
        gaps: usize,
        windows: usize,
    },

    #[error("sigma is zero at non-final step {0}")]
    ZeroSigma(usize),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("invalid value: {0}")]
    Validation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { expected, got })
    }
}

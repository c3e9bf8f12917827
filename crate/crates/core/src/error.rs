use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite or non-positive price at step {step}, asset {asset}")]
    NonFinitePrice { step: usize, asset: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("cost fraction exceeds wealth at step {step}: kappa * turnover = {fraction}")]
    CostExceedsWealth { step: usize, fraction: f64 },

    #[error("insufficient sample: need at least {needed}, got {got}")]
    InsufficientSample { needed: usize, got: usize },

    #[error("{path}: line {line}: {message}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("panel is empty after filtering")]
    EmptyPanel,

    #[error("experiment failed: {excluded} of {total} paths excluded (budget 1%)")]
    TooManyExclusions { excluded: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

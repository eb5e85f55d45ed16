use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("bin count must be at least 2, got {0}")]
    TooFewBins(usize),
    #[error("bin count {0} exceeds the supported maximum of 2^20")]
    TooManyBins(usize),
    #[error("load arithmetic overflow")]
    Overflow,
    #[error("negative load in bin {0}")]
    NegativeLoad(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

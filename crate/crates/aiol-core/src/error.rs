use alloc::string::String;
use core::fmt;

/// Errors shared across the library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A precondition on an argument was violated.
    InvalidArgument(String),
    /// Too few samples to fit the requested model.
    InsufficientData(String),
    /// The input distribution collapsed (e.g. all scores identical).
    DegenerateDistribution(String),
    /// A loss or parameter update became non-finite or exploded.
    TrainingDiverged(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::InsufficientData(msg) => write!(f, "insufficient data: {msg}"),
            Error::DegenerateDistribution(msg) => write!(f, "degenerate distribution: {msg}"),
            Error::TrainingDiverged(msg) => write!(f, "training diverged: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

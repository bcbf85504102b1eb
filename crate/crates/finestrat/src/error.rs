//! Crate-wide error type.
//!
//! The three variants map onto the CLI exit-code contract: configuration
//! errors exit 1, data errors exit 2, numerical failures exit 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or call preconditions (bad sizes, ranges, plans).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed or inconsistent input data (files, samples, datasets).
    #[error("invalid data: {0}")]
    Data(String),

    /// Numerical failure (degenerate normalization, factorization failure).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::io;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("degenerate partition: {0}")]
    DegeneratePartition(String),

    #[error("undefined moments: {0}")]
    UndefinedMoments(String),

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfiguration(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegeneratePartition(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

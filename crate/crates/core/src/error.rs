use std::io;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model configuration: {0}")]
    Config(String),

    #[error("context overflow: {requested} positions requested, max_seq_len is {max}")]
    Length { requested: usize, max: usize },

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("vocabulary mismatch: {0}")]
    Vocabulary(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Length { .. } => "length",
            Error::Numeric(_) => "numeric",
            Error::Contract(_) => "contract",
            Error::Vocabulary(_) => "vocabulary",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Data(_) => "data",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

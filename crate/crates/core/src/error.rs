use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("frame timestamps are not strictly increasing at index {index}")]
    InvalidTimestamps { index: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("need at least {needed} flow fields, got {got}")]
    InsufficientFrames { needed: usize, got: usize },
    #[error("invalid block window: {0}")]
    InvalidWindow(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("normalization error: {0}")]
    Normalization(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("index {index} out of range (limit {limit})")]
    Index { index: usize, limit: usize },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

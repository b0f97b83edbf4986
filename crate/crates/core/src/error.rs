use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape error: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("zero-power frame cannot be normalized")]
    ZeroPower,

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: Vec<u8>, found: Vec<u8> },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u16, found: u16 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint descriptor does not match the model: {0}")]
    DescriptorMismatch(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }
}

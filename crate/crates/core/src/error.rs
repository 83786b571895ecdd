use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or arguments.
    Usage,
    /// Malformed, misaligned or unreadable input.
    Data,
    /// The numerical core could not produce a valid result.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid block table: {0}")]
    InvalidTable(String),

    #[error("codepoint {0:#X} is outside the Unicode range")]
    CodepointOutOfRange(u32),

    #[error("sentence is empty")]
    EmptySentence,

    #[error("corpus contains no non-empty sentences")]
    EmptyCorpus,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in input")]
    NonFinite,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("model references block {0:?}, which is not in the block table")]
    UnknownBlock(String),

    #[error("version mismatch: {0}")]
    VersionMismatch(String),

    #[error("misaligned input: {0}")]
    Alignment(String),

    #[error("line {line}: invalid UTF-8")]
    InvalidUtf8 { line: usize },

    #[error("line {line}: {source}")]
    LineIo { line: usize, source: io::Error },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("malformed model file: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidConfig(_) => ErrorKind::Usage,
            Error::Numeric(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}

use std::io;

use thiserror::Error;

/// Errors produced by every saescope operation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// Bad magic, unsupported version or malformed header/metadata.
    #[error("format error: {0}")]
    Format(String),

    /// File shorter or longer than its header declares.
    #[error("corrupt file: expected {expected} bytes, found {actual}")]
    Corrupt { expected: u64, actual: u64 },

    /// Non-finite or otherwise invalid numeric content.
    #[error("data error: {0}")]
    Data(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: {what} expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// An operation was called in a context it does not support.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}

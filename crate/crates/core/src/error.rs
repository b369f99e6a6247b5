use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition (shape mismatch,
    /// index out of range, singular gauge matrix, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A requested computation would exceed a configured resource cap.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// A text input could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}

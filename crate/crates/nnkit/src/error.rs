//! Error types shared across the toolkit.

use std::fmt;

/// All failure modes surfaced by the library.
#[derive(Debug)]
pub enum Error {
    /// Tensor shapes are inconsistent with the requested operation.
    Shape(String),
    /// An argument is outside its mathematical domain (k = 0, empty set, ...).
    Domain(String),
    /// A dataset file violates its binary format.
    Format(String),
    /// Dataset contents are unusable (empty class, label out of range, ...).
    Data(String),
    /// API misuse: stale cache, mismatched optimizer state, wrong blob version.
    Usage(String),
    /// Experiment configuration could not be parsed or validated.
    Config(String),
    /// Training produced a non-finite value; the payload is the epoch index.
    Numeric(usize),
    /// Underlying I/O failure.
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Usage(msg) => write!(f, "usage error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Numeric(epoch) => write!(f, "numeric failure: non-finite loss at epoch {epoch}"),
            Error::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand extents are incompatible.
    #[error("{op}: dimension mismatch: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A documented precondition of an operation was violated.
    #[error("{op}: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {detail}", path.display())]
    Format { path: PathBuf, detail: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract { op, detail: detail.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }
}

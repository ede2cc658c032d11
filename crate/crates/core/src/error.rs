use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed file contents. `offset` is the byte position of the
    /// offending record or field.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// Arguments outside the domain of an operation.
    #[error("{0}")]
    Domain(String),

    /// A structural invariant failed to hold on a built or loaded object.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A malformed or invalid record in an input file.
    #[error("{}:{line}: {msg}", path.display())]
    Record { path: PathBuf, line: usize, msg: String },

    #[error("{0}")]
    Invalid(String),

    #[error("tag sequence has {tags} entries but document has {tokens} tokens")]
    TagMismatch { tokens: usize, tags: usize },

    #[error("instance needs {needed} positions for question, option and special tokens but max_len is {max_len}")]
    TooLong { needed: usize, max_len: usize },

    #[error("checkpoint {}: {msg}", path.display())]
    Checkpoint { path: PathBuf, msg: String },

    #[error("non-finite loss in stage '{stage}' at epoch {epoch}, step {step}")]
    NonFinite { stage: String, epoch: usize, step: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

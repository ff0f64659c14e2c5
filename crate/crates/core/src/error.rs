use std::io;
use std::path::PathBuf;

use crate::tensor::Shape5;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape5,
        right: Shape5,
    },

    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },

    #[error("unknown label value {value} at (z={z}, h={h}, w={w})")]
    UnknownLabel {
        value: u8,
        z: usize,
        h: usize,
        w: usize,
    },

    #[error("npy: {0}")]
    Npy(String),

    #[error("config: {0}")]
    Config(String),

    #[error("non-finite loss at step {step} (batch dumped to {dump:?})")]
    NonFiniteLoss { step: usize, dump: PathBuf },

    #[error("{path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs or configuration rather than
    /// failures while running.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::NonFiniteLoss { .. })
    }
}

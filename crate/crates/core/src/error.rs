use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by tensor operations, model code and file handling.
#[derive(Debug, Error)]
pub enum Error {
    /// An operation was called with arguments that break its contract
    /// (shape mismatch, bad axis, invalid configuration, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A NaN or infinity was encountered where finite values are required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Malformed file contents. `offset` is the byte position where the
    /// problem was detected.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! contract {
    ($($arg:tt)*) => {
        $crate::error::Error::Contract(format!($($arg)*))
    };
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)*)));
        }
    };
}

pub(crate) use contract;
pub(crate) use ensure;

impl Error {
    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }
}

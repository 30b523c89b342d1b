use std::path::PathBuf;

use tfa_autodiff::AutodiffError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {msg}", path.display())]
    Wav { path: PathBuf, msg: String },

    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },

    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("non-finite loss {value} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid { op, msg: msg.into() }
    }
}

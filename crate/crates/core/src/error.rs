use std::path::PathBuf;

use lesionseg_autodiff::TensorError;
use thiserror::Error;

use crate::objectives::LossBreakdown;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("configuration: {0}")]
    Config(String),

    #[error("{path}: {err}")]
    Io { path: PathBuf, err: std::io::Error },

    #[error("{path}: malformed {what}: {detail}")]
    Format {
        path: PathBuf,
        what: &'static str,
        detail: String,
    },

    #[error("case generation: {0}")]
    Generation(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: {breakdown}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        breakdown: LossBreakdown,
    },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, err: std::io::Error) -> Self {
        Error::Io { path: path.into(), err }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            what,
            detail: detail.into(),
        }
    }
}

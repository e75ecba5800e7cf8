use std::path::PathBuf;

use discgan_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {reason} (byte offset {offset})")]
    Format {
        path: String,
        offset: usize,
        reason: String,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: u64,
        reason: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("non-finite loss at epoch {epoch}, step {step}; last good checkpoint is epoch {last_good_epoch}")]
    NonFinite {
        epoch: usize,
        step: usize,
        last_good_epoch: usize,
    },

    #[error("missing checkpoint: {}", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake_case tag for machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Format { .. } => "format",
            Error::Parse { .. } => "parse",
            Error::Numerical(_) => "numerical",
            Error::NonFinite { .. } => "non_finite",
            Error::MissingCheckpoint(_) => "missing_checkpoint",
            Error::Tensor(_) => "tensor",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

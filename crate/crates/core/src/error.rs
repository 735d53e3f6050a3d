use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed inconsistent shapes or out-of-range parameters.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Input data violates a physical or numerical assumption.
    #[error("invalid data: {0}")]
    Data(String),

    #[error("internal inconsistency: {0}")]
    Internal(String),

    #[error("solver diverged at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },

    #[error("model error: {0}")]
    Model(String),

    #[error("training failed at epoch {epoch}: {detail}")]
    Training { epoch: usize, detail: String },

    #[error("layer {layer}, case {case}: {source}")]
    Layer {
        layer: usize,
        case: String,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

use std::path::PathBuf;

use tensorkit::TensorError;

pub type Result<T, E = MunitError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum MunitError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownVariant {
        kind: &'static str,
        name: String,
        known: String,
    },
    #[error("image not in range of the domain {domain} renderer: {reason}")]
    NotInRange { domain: usize, reason: String },
    #[error("non-finite loss term `{term}` at step {step}")]
    NonFiniteLoss { term: String, step: u64 },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("{0}")]
    Invalid(String),
}

impl MunitError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Self::Json {
            context: context.into(),
            source,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> MunitError {
    MunitError::Invalid(msg.into())
}

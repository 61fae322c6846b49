use std::path::PathBuf;

use ndgrad::NdError;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Array(#[from] NdError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("motion mode mismatch: expected {expected}, got {found}")]
    Mode { expected: String, found: String },
    #[error("invalid skeleton: {0}")]
    Skeleton(String),
    #[error("degenerate 6D rotation at element {index}")]
    DegenerateRotation { index: usize },
    #[error("window [{start}, {end}) out of range for length {len}")]
    Window { start: usize, end: usize, len: usize },
    #[error("non-finite loss in term `{term}`")]
    NonFiniteLoss { term: String },
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("model has no running latent statistics; train it first")]
    Untrained,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("checkpoint config conflict: {0}")]
    ConfigConflict(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("audio: {0}")]
    Audio(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Error {
        let path = path.into();
        move |source| Error::Json { path, source }
    }

    /// Process exit code: 2 config, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Json { .. } | Error::Wav(_) => 4,
            Error::Checkpoint(_) | Error::Checksum => 4,
            Error::NonFiniteLoss { .. }
            | Error::NonFiniteGradient { .. }
            | Error::DegenerateRotation { .. } => 3,
            Error::Array(NdError::NonFinite { .. } | NdError::Domain { .. }) => 3,
            _ => 2,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invariant violated at {location}: {message}")]
    Invariant { location: String, message: String },

    #[error("duplicate dialogue id `{0}`")]
    DuplicateDialogue(String),

    #[error("no embedding for key `{0}`")]
    MissingEmbedding(String),

    #[error("embedding file: {0}")]
    EmbeddingFormat(String),

    #[error("model artifact: {0}")]
    ModelFormat(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("training produced a non-finite loss at step {step} (epoch {epoch}, batch {batch})")]
    NonFiniteLoss {
        step: usize,
        epoch: usize,
        batch: usize,
    },

    #[error("{count} gold sentences have no prediction (first: {first})")]
    Coverage { count: usize, first: String },

    #[error("verdicts pending for clusters {0:?}")]
    PendingVerdicts(Vec<usize>),

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("event log corrupt: {0}")]
    CorruptLog(String),

    #[error("round ordering: {0}")]
    RoundOrder(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification of an [`Error`], used for exit codes and HTTP status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input data, configuration or file contents.
    Data,
    /// Work is blocked on annotator verdicts.
    Pending,
    /// Anything else.
    Internal,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::PendingVerdicts(_) => ErrorKind::Pending,
            Error::Io(_) | Error::NonFiniteLoss { .. } => ErrorKind::Internal,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn invariant(location: impl ToString, message: impl Into<String>) -> Self {
        Error::Invariant {
            location: location.to_string(),
            message: message.into(),
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

use crate::llm::LlmError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("probability {0} outside the open interval (0, 1)")]
    Domain(f64),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("question has {0} options, at most 26 can be lettered")]
    TooManyOptions(usize),

    #[error("dataset record {record}: {message}")]
    Dataset { record: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    /// A model's answer could not be turned into a checkable solution.
    #[error("model answer rejected: {0}")]
    Rejected(String),

    #[error(transparent)]
    Llm(#[from] LlmError),
}

impl Error {
    /// Process exit status for this error: 2 for configuration and input
    /// problems, 3 for backend failures, 4 for rejected model answers.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Llm(LlmError::Config(_) | LlmError::CredentialMissing { .. } | LlmError::Transcript { .. }) => 2,
            Error::Llm(_) => 3,
            Error::Rejected(_) => 4,
            _ => 2,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}

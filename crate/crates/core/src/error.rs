use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GenError>;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid {kind} id {index} (vocabulary holds {len})")]
    InvalidId {
        kind: &'static str,
        index: usize,
        len: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("only {eligible} eligible entities, {requested} requested")]
    InsufficientEntities { eligible: usize, requested: usize },

    #[error("negative sampling gave up after {attempts} attempts for {context}")]
    NegativeSamplingExhausted { attempts: usize, context: String },

    #[error("support set is empty")]
    EmptySupport,

    #[error("format version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(String),

    #[error("vocabulary hash mismatch: found {found}, expected {expected}")]
    VocabularyMismatch { found: String, expected: String },

    #[error("corrupt {what}: {message}")]
    Corrupt { what: &'static str, message: String },

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GenError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GenError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(what: &'static str, message: impl Into<String>) -> Self {
        GenError::Corrupt {
            what,
            message: message.into(),
        }
    }
}

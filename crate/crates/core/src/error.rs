use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },

    #[error("unit {unit_id}: {invariant}")]
    Validation { unit_id: String, invariant: String },

    #[error("stratification failed: {0}")]
    Stratification(String),

    #[error("invalid generator spec field `{field}`: {message}")]
    Spec { field: String, message: String },

    #[error("unknown label `{0}`")]
    Label(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("cannot render prompt: {0}")]
    Render(String),

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("invalid model config: {0}")]
    ModelConfig(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("invalid regime `{id}`: {message}")]
    Regime { id: String, message: String },

    #[error("training aborted at step {step}: {message}")]
    Training { step: usize, message: String },

    #[error("metric error: {0}")]
    Metric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(unit_id: &str, invariant: impl Into<String>) -> Self {
        Error::Validation {
            unit_id: unit_id.to_string(),
            invariant: invariant.into(),
        }
    }

    pub(crate) fn spec(field: &str, message: impl Into<String>) -> Self {
        Error::Spec {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {got}")]
    InputShape { expected: usize, got: usize },

    #[error("activation cache does not match this network: {0}")]
    Cache(String),

    #[error("optimizer shape mismatch: {params} params, {grads} grads, {moments} moments")]
    Optimizer {
        params: usize,
        grads: usize,
        moments: usize,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("state kind mismatch: expected {expected}, got {got}")]
    KindMismatch {
        expected: &'static str,
        got: &'static str,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("invalid permutation: {0}")]
    Permutation(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("training aborted at step {step}: non-finite log-likelihood on transition {from} -> {to}")]
    Training { step: usize, from: usize, to: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("malformed model file: {0}")]
    MalformedModel(String),

    #[error("unsupported model format version {found} (supported: {supported})")]
    Version { found: u64, supported: u64 },

    #[error("model dimension inconsistency: {0}")]
    Dimension(String),

    #[error("episode error: {0}")]
    Episode(String),

    #[error("dataset has no ground-truth order")]
    MissingTruth,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

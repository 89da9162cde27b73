use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid missing-rate protocol: {0}")]
    InvalidProtocol(String),

    #[error("presence matrix infeasible: rows {rows:?} cannot retain any modality")]
    InfeasiblePresence { rows: Vec<usize> },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("corpus format version {found} is not supported (expected {expected})")]
    CorpusVersion { found: u32, expected: u32 },

    #[error("corrupt sample {sample_id}: {reason}")]
    CorruptSample { sample_id: String, reason: String },

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("non-finite value in {component}")]
    NonFinite { component: String },

    #[error("invalid gap observation for modality {modality}: {value}")]
    InvalidObservation { modality: usize, value: f64 },

    #[error("no modality present")]
    NoModalityPresent,

    #[error("missing column `{0}` in run log")]
    MissingColumn(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

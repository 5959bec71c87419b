use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("missing features for slide {case_id}/{slide_id}")]
    MissingFeatures { case_id: String, slide_id: String },
    #[error("invalid shard file: {0}")]
    Format(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty class: {0}")]
    EmptyClass(String),
    #[error("numeric error in {tensor}: {message}")]
    Numeric { tensor: String, message: String },
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("missing labels: {0}")]
    MissingLabels(String),
    #[error("stage {stage} failed: every trial failed ({statuses})")]
    StageFailed { stage: usize, statuses: String },
    #[error("trial failed: {0}")]
    Trial(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

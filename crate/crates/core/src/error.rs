use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ShufaError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    ManifestLine {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate record_id `{0}`")]
    DuplicateRecord(String),
    #[error("record `{record_id}` references missing image {}", path.display())]
    MissingImage { record_id: String, path: PathBuf },
    #[error("invalid record `{record_id}`: {message}")]
    InvalidRecord { record_id: String, message: String },
    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("need at least {needed} base glyphs, got {available}")]
    InsufficientGlyphs { needed: usize, available: usize },
    #[error("manifest has {writers} writer classes; need more than {needed}")]
    TooFewWriters { writers: usize, needed: usize },
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("triplet sampling failed: {0}")]
    TripletConstraint(String),
    #[error("episode setup failed: {0}")]
    Episode(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("image {}: {message}", path.display())]
    Image { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Engine(#[from] shufa_autograd::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = ShufaError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> ShufaError {
    let path = path.into();
    move |source| ShufaError::Io { path, source }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("decode failure for {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("zero-area image {path}")]
    ZeroArea { path: PathBuf },

    #[error("dimension mismatch: image {image:?} vs mask {mask:?}")]
    DimensionMismatch { image: (u32, u32), mask: (u32, u32) },

    #[error("empty distribution{}", fmt_id(.0))]
    EmptyDistribution(Option<String>),

    #[error("non-finite sample in distribution{}", fmt_id(.0))]
    NonFiniteSample(Option<String>),

    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),

    #[error("unknown sample id `{0}`")]
    UnknownSample(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient batches: need at least {needed}, have {have}")]
    InsufficientBatches { needed: usize, have: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn fmt_id(id: &Option<String>) -> String {
    match id {
        Some(id) => format!(" for `{id}`"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

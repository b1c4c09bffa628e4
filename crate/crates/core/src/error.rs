use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("channel count mismatch: header declares {declared} channels, data has {found}")]
    ChannelMismatch { declared: usize, found: usize },

    #[error("event at sample {sample_index} is outside the recording ({n_samples} samples)")]
    EventOutOfRange { sample_index: usize, n_samples: usize },

    #[error("malformed event table: {0}")]
    MalformedEvents(String),

    #[error("invalid recording: {0}")]
    InvalidRecording(String),

    #[error("unknown stimulus code {code} at sample {sample_index}")]
    UnknownStimCode { code: u32, sample_index: usize },

    #[error("duplicate stimulus onset at sample {0}")]
    DuplicateOnset(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("numerical check failed: {0}")]
    Numerical(String),

    #[error("degenerate variance at channel {channel}, sample {sample}: paired differences are constant and nonzero")]
    DegenerateVariance { channel: usize, sample: usize },

    #[error("train/test leakage: {0}")]
    Leakage(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

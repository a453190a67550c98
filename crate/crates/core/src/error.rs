use std::path::PathBuf;

use crate::hypergraph::StepRecord;

/// Errors raised by every fallible operation in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mask has no active element")]
    EmptyMask,

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("shape {shape:?} is not divisible by {divisor:?}")]
    IndivisibleShape { shape: Vec<usize>, divisor: Vec<usize> },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("unknown trigger `{0}`")]
    UnknownTrigger(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("denoiser does not expose a vector-Jacobian product")]
    NotDifferentiable,

    #[error("optimization diverged at step {step}: total loss {current} vs initial {initial}")]
    DivergenceDetected {
        step: usize,
        initial: f64,
        current: f64,
        trajectory: Vec<StepRecord>,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("division by zero at index {index}")]
    DivisionByZero { index: usize },

    #[error("non-finite value produced by {context}")]
    NonFiniteValue { context: &'static str },

    #[error("step {t} is outside the cosine horizon {horizon}")]
    OutOfHorizon { t: u64, horizon: u64 },

    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),

    #[error("invalid problem constants: {0}")]
    InvalidConstants(String),

    #[error("value oracle unavailable for this problem")]
    ValueUnavailable,

    #[error("histogram window contains no updates")]
    EmptyWindow,

    #[error("all recorded magnitudes are zero")]
    AllZero,

    #[error("trace is missing field `{0}`")]
    MissingTraceFields(&'static str),

    #[error("malformed trace: {0}")]
    InvalidTrace(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("grid is not rectangular: expected {expected} cells, found {found}")]
    NonRectangularGrid { expected: usize, found: usize },

    #[error("{path}:{line}: {message}")]
    MalformedCsv {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("step {step}: {source}")]
    AtStep {
        step: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_step(self, step: u64) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: missing column `{column}`")]
    Schema { column: String },

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("no rows found for machine {machine_id}")]
    EmptySelection { machine_id: u32 },

    #[error("insufficient data for {what}: need {needed}, have {available}")]
    InsufficientData {
        what: String,
        needed: usize,
        available: usize,
    },

    #[error("feature `{feature}` is degenerate (min == max == {value})")]
    DegenerateFeature { feature: String, value: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("batch norm in train mode needs a batch of at least 2, got {0}")]
    BatchSize(usize),

    #[error("non-finite value produced by layer {layer}")]
    NonFinite { layer: String },

    #[error("{stage} diverged at step {index}: loss is not finite")]
    Diverged { stage: String, index: usize },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("state error: {0}")]
    State(String),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn insufficient(what: impl Into<String>, needed: usize, available: usize) -> Self {
        Error::InsufficientData {
            what: what.into(),
            needed,
            available,
        }
    }

    /// True for errors caused by a numeric blow-up rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::NonFinite { .. })
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::path::PathBuf;

use crate::infer::PredictionTrace;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}, level {level} (learning rate {learning_rate})")]
    TrainingDiverged {
        epoch: usize,
        batch: usize,
        level: usize,
        learning_rate: f64,
    },

    #[error("inference diverged at row {row}, level {level}, step {step}")]
    InferenceDiverged {
        row: usize,
        level: usize,
        step: usize,
        trace: Box<PredictionTrace>,
    },

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn shape<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

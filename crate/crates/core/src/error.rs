use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("architecture mismatch between models")]
    ArchitectureMismatch,

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("insufficient data: need {needed} records, pool has {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("input is not a probability vector: {0}")]
    NotSimplex(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("AUC undefined: {0}")]
    UndefinedAuc(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("column `{column}` missing from header")]
    MissingColumn { column: String },

    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: unknown label `{label}`")]
    UnknownLabel { row: usize, label: String },

    #[error("retraining failed at chunk {chunk}: {source}")]
    Retrain {
        chunk: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

use crate::data::Week;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}

/// Errors raised while ingesting or preparing weekly series.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}: line {line}: duplicate week {week}")]
    DuplicateWeek { path: PathBuf, line: u64, week: Week },

    #[error("{path}: line {line}: gap between {previous} and {next}")]
    Gap {
        path: PathBuf,
        line: u64,
        previous: Week,
        next: Week,
    },

    #[error("{path}: line {line}: non-numeric value `{value}` in column `{column}`")]
    BadNumber {
        path: PathBuf,
        line: u64,
        column: String,
        value: String,
    },

    #[error("{path}: line {line}: value {value} outside [{min}, {max}]")]
    Range {
        path: PathBuf,
        line: u64,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("{path}: line {line}: invalid week: {reason}")]
    BadWeek { path: PathBuf, line: u64, reason: String },

    #[error("{path}: unsupported export layout: {reason}")]
    Layout { path: PathBuf, reason: String },

    #[error("{path}: no data rows")]
    Empty { path: PathBuf },

    #[error("state mismatch: `{left}` vs `{right}`")]
    StateMismatch { left: String, right: String },

    #[error("the two series share no weeks")]
    EmptyIntersection,

    #[error("joined series has a gap between {previous} and {next}")]
    GappedIntersection { previous: Week, next: Week },

    #[error("series of length {len} is too short; at least {needed} weeks required")]
    TooShort { len: usize, needed: usize },

    #[error("channel `{channel}` is constant over the fit region; min-max scaling undefined")]
    DegenerateScale { channel: String },
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

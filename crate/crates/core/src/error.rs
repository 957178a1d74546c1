use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, left {left} vs right {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("empty input sequence")]
    EmptySequence,

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint version mismatch: expected `{expected}`, found `{found}`")]
    CheckpointVersion { expected: String, found: String },

    #[error("checkpoint shape corruption in `{tensor}`: {detail}")]
    CheckpointShape { tensor: String, detail: String },

    #[error("checkpoint parse error at line {line}: {detail}")]
    CheckpointParse { line: usize, detail: String },

    #[error("date misalignment between locations: {0}")]
    DateAlignment(String),

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("unknown location `{0}`")]
    UnknownLocation(String),

    #[error("unparseable cell in {path} row {row} column `{column}`: `{value}`")]
    BadCell {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },

    #[error("missing value in {path} row {row} column `{column}`")]
    MissingValue {
        path: PathBuf,
        row: usize,
        column: String,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("range too short: {len} days, need at least {needed}")]
    RangeTooShort { len: usize, needed: usize },

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("duplicate report cell: {0}")]
    DuplicateCell(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        Error::Shape {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

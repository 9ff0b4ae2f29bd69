use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: expected {expected} input columns, got {got}")]
    LayerShape {
        layer: usize,
        expected: usize,
        got: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid part label {label} (valid range 0..={parts})")]
    InvalidLabel { label: usize, parts: usize },

    #[error("invalid part id {part} (valid range 1..={parts})")]
    InvalidPart { part: usize, parts: usize },

    #[error("part {0} is absent")]
    AbsentPart(usize),

    #[error("part {0} assigned more than once")]
    DuplicatePart(usize),

    #[error("interpolation parameter {0} outside [0, 1]")]
    InterpolationRange(f64),

    #[error("tape state: {0}")]
    TapeState(String),

    #[error("non-finite update for parameter `{0}`")]
    NonFiniteUpdate(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("set size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("set size {size} exceeds exact solver limit {limit}")]
    OverLimit { size: usize, limit: usize },

    #[error("point/label count mismatch: {points} points, {labels} labels")]
    CountMismatch { points: usize, labels: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid split ratios: {0}")]
    Ratios(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("head not available: {0}")]
    HeadMissing(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

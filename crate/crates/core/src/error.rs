use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("index {id} out of range for table with {len} rows")]
    IndexOutOfRange { id: usize, len: usize },

    #[error("degenerate vector in row {row}: norm {norm:e} is below the normalization floor")]
    DegenerateVector { row: usize, norm: f64 },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("variable does not belong to this tape")]
    ForeignVar,

    #[error("backward already ran on this tape; call zero_grads first")]
    BackwardTwice,

    #[error("function is not deterministic: forward values {first} and {second} differ")]
    NonDeterministic { first: f64, second: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("file truncated: {0}")]
    Truncated(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("duplicate id {0}")]
    DuplicateId(u64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("vector is not unit length (norm {norm})")]
    NotUnit { norm: f64 },

    #[error("training diverged at step {step}: loss is not finite")]
    Divergence { step: usize },

    #[error("prompt {0:?} tokenizes to nothing")]
    EmptyPrompt(String),

    #[error("label {0:?} is not in the class set")]
    UnknownLabel(String),

    #[error("class {class:?} has {have} examples but {need} were requested")]
    InsufficientData { class: String, have: usize, need: usize },

    #[error("corpus has {have} pairs but the batch size is {need}")]
    CorpusTooSmall { have: usize, need: usize },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("corrupt {what}: {msg}")]
    Corrupt { what: &'static str, msg: String },

    #[error("unsupported {what} version {found} (expected {expected})")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("token id {id} out of range for table with {rows} rows")]
    IdOutOfRange { id: u32, rows: usize },

    #[error("empty token sequence")]
    EmptySequence,

    #[error("dimension mismatch ({context}): expected {expected}, got {found}")]
    Dimension {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("duplicate item id {0:?}")]
    DuplicateId(String),

    #[error("vector for item {id:?} is not unit norm (norm {norm})")]
    NotUnitNorm { id: String, norm: f32 },

    #[error("vocabulary hash mismatch: checkpoint expects {expected}, loaded {found}")]
    VocabMismatch { expected: String, found: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dangling {kind} id {id:?}")]
    Dangling { kind: &'static str, id: String },

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("no negatives available: both random and batch sources are empty")]
    NoNegatives,

    #[error("metric needs both classes: {positives} positives, {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
}

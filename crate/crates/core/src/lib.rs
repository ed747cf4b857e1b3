//! Two-tower embedding retrieval: a shared tokenizer, multi-head query tower
//! and unit-norm item tower, hinge-loss training with hybrid negatives, an
//! approximate nearest-neighbor index, data ingestion and offline metrics.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod index;
pub mod ingest;
pub mod nn;
pub mod servable;
pub mod tokenizer;
pub mod towers;
pub mod training;

pub use error::{Error, Result};

//! Network serving for two-tower servables.
//!
//! [`server`] answers retrieval requests for one in-process servable,
//! [`proxy`] routes requests by model name to a set of such servers, and
//! [`client`] and [`bench`] drive either over HTTP/1.1.

pub mod bench;
pub mod client;
pub mod protocol;
pub mod proxy;
pub mod server;
pub mod stats;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("http error: {0}")]
    Http(String),

    #[error("request timed out after {0} ms")]
    Timeout(u64),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("unhealthy endpoint {endpoint}: {msg}")]
    Unhealthy { endpoint: String, msg: String },

    #[error(transparent)]
    Core(#[from] twotower_core::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = ServeError> = std::result::Result<T, E>;

//! Wire types shared by server, proxy and clients.

use serde::{Deserialize, Serialize};
use twotower_core::servable::Hit;

pub const RETRIEVE_PATH: &str = "/v1/retrieve";
pub const HEALTH_PATH: &str = "/healthz";
pub const STATS_PATH: &str = "/stats";
/// Response header naming the backend a proxied request went to.
pub const ROUTED_TO_HEADER: &str = "x-routed-to";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieveRequest {
    pub model: String,
    pub query: String,
    /// Falls back to the servable default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub user_features: Vec<u32>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub debug: bool,
}

impl RetrieveRequest {
    pub fn new(model: impl Into<String>, query: impl Into<String>, k: usize) -> Self {
        Self {
            model: model.into(),
            query: query.into(),
            k: Some(k),
            user_features: Vec::new(),
            debug: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebugInfo {
    /// Vocabulary ids the query text encoded to.
    pub tokens: Vec<u32>,
    pub heads: usize,
    pub candidates_per_head: usize,
}

/// Hits come first so that two responses can be compared byte for byte up
/// to the timing field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieveResponse {
    pub hits: Vec<Hit>,
    pub took_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub debug: Option<DebugInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
}

/// The part of a serialized response that carries results: everything
/// before the timing field.
pub fn hits_bytes(body: &[u8]) -> &[u8] {
    const MARK: &[u8] = b",\"took_ms\"";
    body.windows(MARK.len())
        .position(|w| w == MARK)
        .map_or(body, |p| &body[..p])
}

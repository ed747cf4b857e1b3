//! Routes retrieval requests by model name to the servers holding that
//! model: strict round-robin over healthy backends, periodic health checks
//! with strike-based ejection, and one retry on transport failure.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use log::{info, warn};
use serde::Deserialize;
use tokio::task::JoinHandle;

use crate::client::HttpClient;
use crate::protocol::{Health, HEALTH_PATH, RETRIEVE_PATH, ROUTED_TO_HEADER, STATS_PATH};
use crate::server::{error_response, json};
use crate::stats::Stats;
use crate::{Result, ServeError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxyOptions {
    pub health_interval: Duration,
    /// Consecutive failures that eject a backend.
    pub strikes: u32,
    /// Budget for one forwarded request.
    pub timeout: Duration,
}

impl Default for ProxyOptions {
    fn default() -> Self {
        Self {
            health_interval: Duration::from_secs(2),
            strikes: 3,
            timeout: Duration::from_millis(1000),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BackendHealth {
    pub healthy: bool,
    /// Consecutive failures since the last success.
    pub failures: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RouteError {
    UnknownModel(String),
    Unavailable(String),
}

/// Model name to backend URLs plus the current health of every backend.
///
/// Health is published as immutable snapshots: a reader either sees the map
/// before an update or after it.
#[derive(Debug)]
pub struct ShardTable {
    models: BTreeMap<String, Vec<String>>,
    cursors: HashMap<String, AtomicUsize>,
    health: RwLock<Arc<HashMap<String, BackendHealth>>>,
    writer: Mutex<()>,
    strikes: u32,
}

impl ShardTable {
    /// Every backend starts out healthy.
    pub fn new(models: BTreeMap<String, Vec<String>>, strikes: u32) -> Result<Self> {
        if strikes < 1 {
            return Err(ServeError::Config("strikes must be >= 1".into()));
        }
        let mut health = HashMap::new();
        for (name, urls) in &models {
            if urls.is_empty() {
                return Err(ServeError::Config(format!("model {name:?} has no backends")));
            }
            for u in urls {
                health.insert(
                    u.trim_end_matches('/').to_string(),
                    BackendHealth {
                        healthy: true,
                        failures: 0,
                    },
                );
            }
        }
        let models: BTreeMap<String, Vec<String>> = models
            .into_iter()
            .map(|(m, urls)| (m, urls.into_iter().map(|u| u.trim_end_matches('/').to_string()).collect()))
            .collect();
        Ok(Self {
            cursors: models.keys().map(|m| (m.clone(), AtomicUsize::new(0))).collect(),
            models,
            health: RwLock::new(Arc::new(health)),
            writer: Mutex::new(()),
            strikes,
        })
    }

    /// Reads `{"model": ["http://host:port", ...]}`.
    pub fn from_file(path: impl AsRef<Path>, strikes: u32) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::new(serde_json::from_str(&text)?, strikes)
    }

    pub fn models(&self) -> &BTreeMap<String, Vec<String>> {
        &self.models
    }

    /// Every distinct backend URL.
    pub fn backends(&self) -> Vec<String> {
        let mut all: Vec<String> = self.models.values().flatten().cloned().collect();
        all.sort();
        all.dedup();
        all
    }

    pub fn snapshot(&self) -> Arc<HashMap<String, BackendHealth>> {
        self.health.read().expect("health lock").clone()
    }

    /// Next healthy backend for `model` in round-robin order.
    pub fn route(&self, model: &str) -> std::result::Result<String, RouteError> {
        self.route_excluding(model, &[])
    }

    /// Like [`route`](Self::route), skipping the `exclude`d backends.
    pub fn route_excluding(&self, model: &str, exclude: &[String]) -> std::result::Result<String, RouteError> {
        let urls = self
            .models
            .get(model)
            .ok_or_else(|| RouteError::UnknownModel(model.to_string()))?;
        let snap = self.snapshot();
        let healthy: Vec<&String> = urls
            .iter()
            .filter(|u| snap.get(*u).is_some_and(|h| h.healthy) && !exclude.contains(u))
            .collect();
        if healthy.is_empty() {
            return Err(RouteError::Unavailable(model.to_string()));
        }
        let n = self.cursors[model].fetch_add(1, Ordering::Relaxed);
        Ok(healthy[n % healthy.len()].clone())
    }

    /// Records one health observation. A success restores the backend; the
    /// configured number of consecutive failures ejects it.
    pub fn observe(&self, url: &str, ok: bool) {
        let _w = self.writer.lock().expect("writer lock");
        let current = self.snapshot();
        let Some(&old) = current.get(url) else {
            return;
        };
        let new = if ok {
            BackendHealth {
                healthy: true,
                failures: 0,
            }
        } else {
            let failures = old.failures + 1;
            BackendHealth {
                healthy: old.healthy && failures < self.strikes,
                failures,
            }
        };
        if new == old {
            return;
        }
        if new.healthy != old.healthy {
            if new.healthy {
                info!("backend {url} recovered");
            } else {
                warn!("backend {url} ejected after {} failures", new.failures);
            }
        }
        let mut next = (*current).clone();
        next.insert(url.to_string(), new);
        *self.health.write().expect("health lock") = Arc::new(next);
    }
}

struct ProxyState {
    table: Arc<ShardTable>,
    client: HttpClient,
    stats: Stats,
}

#[derive(Deserialize)]
struct RouteKey {
    model: String,
}

pub fn router(table: Arc<ShardTable>, opts: ProxyOptions) -> Router {
    let state = Arc::new(ProxyState {
        table,
        client: HttpClient::new(opts.timeout),
        stats: Stats::default(),
    });
    Router::new()
        .route(RETRIEVE_PATH, post(forward))
        .route(HEALTH_PATH, get(health))
        .route(STATS_PATH, get(stats))
        .with_state(state)
}

async fn health() -> Response {
    json(StatusCode::OK, &Health { status: "ok".into() })
}

async fn stats(State(st): State<Arc<ProxyState>>) -> Response {
    json(StatusCode::OK, &st.stats.report())
}

async fn forward(State(st): State<Arc<ProxyState>>, body: Bytes) -> Response {
    let start = Instant::now();
    let resp = forward_inner(&st, body).await;
    st.stats
        .record(start.elapsed().as_secs_f64() * 1e3, resp.status().is_success());
    resp
}

async fn forward_inner(st: &ProxyState, body: Bytes) -> Response {
    let model = match serde_json::from_slice::<RouteKey>(&body) {
        Ok(k) => k.model,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    let mut url = match st.table.route(&model) {
        Ok(u) => u,
        Err(RouteError::UnknownModel(m)) => {
            return error_response(StatusCode::NOT_FOUND, format!("unknown model {m:?}"));
        }
        Err(RouteError::Unavailable(m)) => {
            return error_response(StatusCode::SERVICE_UNAVAILABLE, format!("no healthy backend for model {m:?}"));
        }
    };
    let mut failed: Vec<String> = Vec::new();
    loop {
        match st.client.post(&format!("{url}{RETRIEVE_PATH}"), body.clone()).await {
            Ok(r) => {
                let mut resp = (r.status, r.body).into_response();
                if let Some(ct) = r.headers.get(header::CONTENT_TYPE) {
                    resp.headers_mut().insert(header::CONTENT_TYPE, ct.clone());
                }
                if let Ok(v) = HeaderValue::from_str(&url) {
                    resp.headers_mut().insert(ROUTED_TO_HEADER, v);
                }
                return resp;
            }
            Err(ServeError::Timeout(ms)) => {
                st.table.observe(&url, false);
                return error_response(StatusCode::GATEWAY_TIMEOUT, format!("backend {url} timed out after {ms} ms"));
            }
            Err(e) => {
                warn!("backend {url} failed: {e}");
                st.table.observe(&url, false);
                failed.push(url);
            }
        }
        // one retry, on a different backend
        match st.table.route_excluding(&model, &failed) {
            Ok(next) if failed.len() < 2 => url = next,
            _ => break,
        }
    }
    error_response(
        StatusCode::BAD_GATEWAY,
        format!("backends failed for model {model:?}: {}", failed.join(", ")),
    )
}

/// Probes every backend's health endpoint once.
pub async fn check_all(table: &ShardTable, client: &HttpClient) {
    let mut probes = tokio::task::JoinSet::new();
    for url in table.backends() {
        let client = client.clone();
        probes.spawn(async move {
            let ok = matches!(client.get(&format!("{url}{HEALTH_PATH}")).await, Ok(r) if r.status.is_success());
            (url, ok)
        });
    }
    while let Some(r) = probes.join_next().await {
        if let Ok((url, ok)) = r {
            table.observe(&url, ok);
        }
    }
}

/// Runs health checks every `opts.health_interval` until aborted.
pub fn spawn_health_agent(table: Arc<ShardTable>, opts: ProxyOptions) -> JoinHandle<()> {
    tokio::spawn(async move {
        let client = HttpClient::new(opts.timeout);
        let mut tick = tokio::time::interval(opts.health_interval);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tick.tick().await;
            check_all(&table, &client).await;
        }
    })
}

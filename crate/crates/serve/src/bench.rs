//! Closed-loop latency benchmark against a server or proxy.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use twotower_core::eval::LatencySummary;

use crate::client::HttpClient;
use crate::protocol::{RetrieveRequest, HEALTH_PATH};
use crate::{Result, ServeError};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub endpoint: String,
    pub model: String,
    pub k: usize,
    pub concurrency: usize,
    pub duration: Duration,
    /// Stop early after this many requests (0 means no limit).
    pub max_requests: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub requests: usize,
    pub errors: usize,
    pub concurrency: usize,
    pub elapsed_s: f64,
    pub qps: f64,
    pub latency: LatencySummary,
}

impl BenchReport {
    pub fn summary_line(&self) -> String {
        format!(
            "requests={}\terrors={}\tconcurrency={}\tqps={:.1}\tp50_ms={:.3}\tp99_ms={:.3}\tmean_ms={:.3}",
            self.requests,
            self.errors,
            self.concurrency,
            self.qps,
            self.latency.p50_ms,
            self.latency.p99_ms,
            self.latency.mean_ms
        )
    }
}

/// Replays `queries` in order, cycling, from `concurrency` workers that each
/// keep one request in flight. Fails up front if the endpoint is unhealthy;
/// request errors are counted, not fatal.
pub async fn run(config: &BenchConfig, queries: &[String]) -> Result<BenchReport> {
    if queries.is_empty() || config.concurrency < 1 {
        return Err(ServeError::Config("need queries and concurrency >= 1".into()));
    }
    let client = HttpClient::new(Duration::from_secs(30));
    let endpoint = config.endpoint.trim_end_matches('/').to_string();
    match client.get(&format!("{endpoint}{HEALTH_PATH}")).await {
        Ok(r) if r.status.is_success() => {}
        Ok(r) => {
            return Err(ServeError::Unhealthy {
                endpoint,
                msg: format!("status {}", r.status),
            })
        }
        Err(e) => {
            return Err(ServeError::Unhealthy {
                endpoint,
                msg: e.to_string(),
            })
        }
    }
    let bodies: Arc<Vec<axum::body::Bytes>> = Arc::new(
        queries
            .iter()
            .map(|q| serde_json::to_vec(&RetrieveRequest::new(&config.model, q, config.k)).map(Into::into))
            .collect::<std::result::Result<_, _>>()?,
    );
    let next = Arc::new(AtomicUsize::new(0));
    let samples = Arc::new(Mutex::new(Vec::new()));
    let errors = Arc::new(AtomicUsize::new(0));
    let start = Instant::now();
    let deadline = start + config.duration;
    let url = format!("{endpoint}{}", crate::protocol::RETRIEVE_PATH);
    let mut workers = tokio::task::JoinSet::new();
    for _ in 0..config.concurrency {
        let (client, url, bodies, next, samples, errors) =
            (client.clone(), url.clone(), bodies.clone(), next.clone(), samples.clone(), errors.clone());
        let max = config.max_requests;
        workers.spawn(async move {
            while Instant::now() < deadline {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if max > 0 && i >= max {
                    break;
                }
                let t = Instant::now();
                let ok = matches!(client.post(&url, bodies[i % bodies.len()].clone()).await, Ok(r) if r.status.is_success());
                let ms = t.elapsed().as_secs_f64() * 1e3;
                if ok {
                    samples.lock().expect("samples lock").push(ms);
                } else {
                    errors.fetch_add(1, Ordering::Relaxed);
                }
            }
        });
    }
    while workers.join_next().await.is_some() {}
    let elapsed_s = start.elapsed().as_secs_f64();
    let samples = samples.lock().expect("samples lock");
    let errors = errors.load(Ordering::Relaxed);
    let requests = samples.len() + errors;
    Ok(BenchReport {
        requests,
        errors,
        concurrency: config.concurrency,
        elapsed_s,
        qps: requests as f64 / elapsed_s,
        latency: LatencySummary::from_ms(&samples),
    })
}

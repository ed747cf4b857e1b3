//! Minimal HTTP/1.1 client used by the proxy, the bench and tests.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use http_body_util::{BodyExt, Full};
use hyper::header::{HeaderMap, CONTENT_TYPE};
use hyper::{Method, Request, StatusCode};
use hyper_util::client::legacy::connect::HttpConnector;
use hyper_util::client::legacy::Client;
use hyper_util::rt::TokioExecutor;
use tokio::sync::Mutex;

use crate::protocol::{RetrieveRequest, RETRIEVE_PATH};
use crate::{Result, ServeError};

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Bytes,
}

impl HttpResponse {
    pub fn json<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_slice(&self.body)?)
    }
}

#[derive(Clone)]
pub struct HttpClient {
    inner: Client<HttpConnector, Full<Bytes>>,
    timeout: Duration,
}

impl HttpClient {
    /// `timeout` bounds each request including reading the whole body.
    pub fn new(timeout: Duration) -> Self {
        Self {
            inner: Client::builder(TokioExecutor::new()).build_http(),
            timeout,
        }
    }

    pub async fn send(&self, method: Method, url: &str, body: Option<Bytes>) -> Result<HttpResponse> {
        let mut builder = Request::builder().method(method).uri(url);
        if body.is_some() {
            builder = builder.header(CONTENT_TYPE, "application/json");
        }
        let req = builder
            .body(Full::new(body.unwrap_or_default()))
            .map_err(|e| ServeError::Http(e.to_string()))?;
        let exchange = async {
            let resp = self.inner.request(req).await.map_err(|e| ServeError::Http(e.to_string()))?;
            let (parts, body) = resp.into_parts();
            let body = body.collect().await.map_err(|e| ServeError::Http(e.to_string()))?.to_bytes();
            Ok(HttpResponse {
                status: parts.status,
                headers: parts.headers,
                body,
            })
        };
        match tokio::time::timeout(self.timeout, exchange).await {
            Ok(r) => r,
            Err(_) => Err(ServeError::Timeout(self.timeout.as_millis() as u64)),
        }
    }

    pub async fn get(&self, url: &str) -> Result<HttpResponse> {
        self.send(Method::GET, url, None).await
    }

    pub async fn post(&self, url: &str, body: Bytes) -> Result<HttpResponse> {
        self.send(Method::POST, url, Some(body)).await
    }

    /// Sends one retrieval request to the server or proxy at `base`.
    pub async fn retrieve(&self, base: &str, req: &RetrieveRequest) -> Result<HttpResponse> {
        self.post(&format!("{base}{RETRIEVE_PATH}"), serde_json::to_vec(req)?.into()).await
    }
}

/// Posts every body to `url` with `concurrency` workers and returns the
/// outcomes in input order.
pub async fn replay(client: &HttpClient, url: &str, bodies: Vec<Bytes>, concurrency: usize) -> Vec<Result<HttpResponse>> {
    let bodies = Arc::new(bodies);
    let next = Arc::new(AtomicUsize::new(0));
    let slots: Arc<Mutex<Vec<Option<Result<HttpResponse>>>>> =
        Arc::new(Mutex::new((0..bodies.len()).map(|_| None).collect()));
    let mut workers = tokio::task::JoinSet::new();
    for _ in 0..concurrency.max(1) {
        let (client, url, bodies, next, slots) = (client.clone(), url.to_string(), bodies.clone(), next.clone(), slots.clone());
        workers.spawn(async move {
            loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= bodies.len() {
                    break;
                }
                let r = client.post(&url, bodies[i].clone()).await;
                slots.lock().await[i] = Some(r);
            }
        });
    }
    while workers.join_next().await.is_some() {}
    let mut slots = slots.lock().await;
    slots
        .drain(..)
        .map(|s| s.unwrap_or_else(|| Err(ServeError::Http("worker aborted".into()))))
        .collect()
}

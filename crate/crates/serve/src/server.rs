//! HTTP server answering retrieval requests for one servable.

use std::future::{Future, IntoFuture};
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use log::{error, info};
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::sync::{oneshot, Semaphore};
use tokio::task::JoinHandle;
use twotower_core::servable::Servable;

use crate::protocol::{DebugInfo, ErrorBody, Health, RetrieveRequest, RetrieveResponse, HEALTH_PATH, RETRIEVE_PATH, STATS_PATH};
use crate::stats::Stats;
use crate::Result;

/// Longest time in-flight requests get to finish after shutdown starts.
pub const DRAIN_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerOptions {
    /// Requests beyond this many in flight are refused with 503.
    pub max_in_flight: usize,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self { max_in_flight: 1024 }
    }
}

struct AppState {
    servable: Arc<Servable>,
    limit: Arc<Semaphore>,
    stats: Stats,
}

pub(crate) fn json<T: Serialize>(status: StatusCode, body: &T) -> Response {
    match serde_json::to_vec(body) {
        Ok(bytes) => (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

pub(crate) fn error_response(status: StatusCode, msg: impl Into<String>) -> Response {
    json(status, &ErrorBody { error: msg.into() })
}

pub fn router(servable: Arc<Servable>, opts: ServerOptions) -> Router {
    let state = Arc::new(AppState {
        servable,
        limit: Arc::new(Semaphore::new(opts.max_in_flight)),
        stats: Stats::default(),
    });
    Router::new()
        .route(RETRIEVE_PATH, post(retrieve))
        .route(HEALTH_PATH, get(health))
        .route(STATS_PATH, get(stats))
        .with_state(state)
}

async fn health() -> Response {
    json(StatusCode::OK, &Health { status: "ok".into() })
}

async fn stats(State(st): State<Arc<AppState>>) -> Response {
    json(StatusCode::OK, &st.stats.report())
}

async fn retrieve(State(st): State<Arc<AppState>>, body: Bytes) -> Response {
    let start = Instant::now();
    let Ok(_permit) = st.limit.clone().try_acquire_owned() else {
        st.stats.reject();
        return error_response(StatusCode::SERVICE_UNAVAILABLE, "too many requests in flight");
    };
    let (status, resp) = answer(&st, &body, start).await;
    st.stats.record(start.elapsed().as_secs_f64() * 1e3, status.is_success());
    resp
}

async fn answer(st: &AppState, body: &[u8], start: Instant) -> (StatusCode, Response) {
    let fail = |status: StatusCode, msg: String| (status, error_response(status, msg));
    let req: RetrieveRequest = match serde_json::from_slice(body) {
        Ok(r) => r,
        Err(e) => return fail(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    let servable = st.servable.clone();
    if req.model != servable.name {
        return fail(StatusCode::NOT_FOUND, format!("unknown model {:?}", req.model));
    }
    let k = req.k.unwrap_or(servable.defaults.k);
    if k < 1 {
        return fail(StatusCode::BAD_REQUEST, "k must be >= 1".into());
    }
    let outcome = tokio::task::spawn_blocking(move || {
        let r = servable.retrieve(&req.query, &req.user_features, k)?;
        let debug = req.debug.then(|| DebugInfo {
            tokens: servable.encode(&req.query).0,
            heads: servable.config().heads,
            candidates_per_head: ((k as f64) * servable.defaults.fanout).ceil() as usize,
        });
        Ok::<_, twotower_core::Error>((r, debug))
    })
    .await;
    match outcome {
        Ok(Ok((r, debug))) => {
            let resp = RetrieveResponse {
                hits: r.hits,
                took_ms: start.elapsed().as_secs_f64() * 1e3,
                warning: r.warning,
                debug,
            };
            (StatusCode::OK, json(StatusCode::OK, &resp))
        }
        Ok(Err(e @ (twotower_core::Error::IdOutOfRange { .. } | twotower_core::Error::Config(_)))) => {
            fail(StatusCode::BAD_REQUEST, e.to_string())
        }
        Ok(Err(e)) => {
            error!("retrieval failed: {e}");
            fail(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
        }
        Err(e) => fail(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")),
    }
}

/// Serves `app` until `shutdown` resolves, then drains in-flight requests
/// for at most [`DRAIN_TIMEOUT`].
pub async fn serve_until<F>(listener: TcpListener, app: Router, shutdown: F) -> Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    let (started_tx, started_rx) = oneshot::channel::<()>();
    let server = axum::serve(listener, app).with_graceful_shutdown(async move {
        shutdown.await;
        let _ = started_tx.send(());
    });
    let server = server.into_future();
    tokio::pin!(server);
    tokio::select! {
        r = &mut server => r?,
        _ = async {
            if started_rx.await.is_ok() {
                tokio::time::sleep(DRAIN_TIMEOUT).await;
            } else {
                std::future::pending::<()>().await;
            }
        } => info!("drain timeout reached, dropping remaining connections"),
    }
    Ok(())
}

/// A server running on a background task.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<Result<()>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting, drains and waits for the server to exit.
    pub async fn shutdown(mut self) -> Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.task.await.map_err(|e| crate::ServeError::Http(e.to_string()))?
    }
}

/// Binds `addr` and serves `app` on a background task.
pub async fn spawn(addr: &str, app: Router) -> Result<ServerHandle> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(serve_until(listener, app, async move {
        let _ = rx.await;
    }));
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        task,
    })
}

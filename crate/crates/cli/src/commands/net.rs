use std::collections::{BTreeSet, HashMap};
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::{info, warn};
use tokio::net::TcpListener;
use twotower_core::eval::{heldout_quality, mean_retrieved_popularity, GroundTruth, LatencySummary, MetricReport};
use twotower_core::ingest::{encode_item, read_interactions, read_items, read_truth, read_users, FeatureStore};
use twotower_core::servable::{RetrievalDefaults, Servable};
use twotower_core::training::EncodedItem;
use twotower_serve::bench::{self as sbench, BenchConfig};
use twotower_serve::proxy::{self as sproxy, ProxyOptions, ShardTable};
use twotower_serve::server::{self, ServerOptions};

use super::model::load_model;
use crate::args::{BenchArgs, EvalArgs, ModelArgs, ProxyArgs, ServeArgs};
use crate::config::Resolver;
use crate::error::{CliError, CliResult};
use crate::manifest::{manifest_path_for, now_unix, verify_input, write_atomic, RunManifest};

fn runtime() -> CliResult<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

/// Resolves on Ctrl-C or SIGTERM.
fn shutdown_signal() -> impl Future<Output = ()> + Send + 'static {
    async {
        #[cfg(unix)]
        {
            let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate())
                .expect("install SIGTERM handler");
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = term.recv() => {}
            }
        }
        #[cfg(not(unix))]
        {
            let _ = tokio::signal::ctrl_c().await;
        }
        info!("shutting down");
    }
}

struct ModelPaths {
    checkpoint: PathBuf,
    index: PathBuf,
    vocab: PathBuf,
    name: String,
    defaults: RetrievalDefaults,
}

impl ModelPaths {
    fn resolve(r: &mut Resolver, a: ModelArgs) -> CliResult<Self> {
        let d = RetrievalDefaults::default();
        Ok(Self {
            checkpoint: r.require("checkpoint", a.checkpoint)?,
            index: r.require("index", a.index)?,
            vocab: r.require("vocab", a.vocab)?,
            name: r.get("name", a.name, "default".to_string())?,
            defaults: RetrievalDefaults {
                k: r.get("k", a.k, d.k)?,
                fanout: r.get("fanout", a.fanout, d.fanout)?,
                ef_search: r.optional("ef-search", a.ef_search)?.or(d.ef_search),
            },
        })
    }

    fn load(&self) -> CliResult<(Servable, twotower_core::towers::TwoTower)> {
        let (towers, info_, vocab) = load_model(&self.checkpoint, &self.vocab)?;
        verify_input(&self.index)?;
        let index = twotower_core::index::load_index(&self.index)?;
        let servable = Servable::new(
            self.name.clone(),
            vocab,
            towers.config.clone(),
            towers.query.clone(),
            info_,
            index,
            self.defaults.clone(),
        )?;
        Ok((servable, towers))
    }

    fn inputs(&self, m: &mut RunManifest) -> CliResult<()> {
        m.input(&self.checkpoint)?;
        m.input(&self.index)?;
        m.input(&self.vocab)
    }
}

async fn bind(addr: &str, port_file: Option<&Path>) -> CliResult<TcpListener> {
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::Other(format!("cannot bind {addr}: {e}")))?;
    let local = listener.local_addr()?;
    info!("listening on {local}");
    if let Some(p) = port_file {
        write_atomic(p, local.to_string().as_bytes())?;
    }
    Ok(listener)
}

pub fn serve(r: &mut Resolver, a: ServeArgs) -> CliResult<()> {
    let model = ModelPaths::resolve(r, a.model)?;
    let addr: String = r.get("addr", a.addr, "127.0.0.1:8080".to_string())?;
    let max_in_flight = r.get("max-in-flight", a.max_in_flight, ServerOptions::default().max_in_flight)?;
    let port_file: Option<PathBuf> = r.optional("port-file", a.port_file)?;
    std::mem::take(r).finish()?;

    let (servable, _) = model.load()?;
    info!(
        "model {:?}: {} items, d={}, {} heads",
        servable.name,
        servable.index().len(),
        servable.index().dim(),
        servable.config().heads
    );
    let app = server::router(Arc::new(servable), ServerOptions { max_in_flight });
    runtime()?.block_on(async {
        let listener = bind(&addr, port_file.as_deref()).await?;
        server::serve_until(listener, app, shutdown_signal()).await?;
        Ok(())
    })
}

pub fn proxy(r: &mut Resolver, a: ProxyArgs) -> CliResult<()> {
    let d = ProxyOptions::default();
    let routes: PathBuf = r.require("routes", a.routes)?;
    let addr: String = r.get("addr", a.addr, "127.0.0.1:8000".to_string())?;
    let opts = ProxyOptions {
        health_interval: Duration::from_millis(r.get(
            "health-interval-ms",
            a.health_interval_ms,
            d.health_interval.as_millis() as u64,
        )?),
        strikes: r.get("strikes", a.strikes, d.strikes)?,
        timeout: Duration::from_millis(r.get("timeout-ms", a.timeout_ms, d.timeout.as_millis() as u64)?),
    };
    let port_file: Option<PathBuf> = r.optional("port-file", a.port_file)?;
    std::mem::take(r).finish()?;
    if !routes.exists() {
        return Err(CliError::MissingArtifact(routes));
    }
    let table = Arc::new(ShardTable::from_file(&routes, opts.strikes)?);
    for (m, urls) in table.models() {
        info!("model {m:?} -> {urls:?}");
    }
    runtime()?.block_on(async {
        let agent = sproxy::spawn_health_agent(table.clone(), opts);
        let listener = bind(&addr, port_file.as_deref()).await?;
        let result = server::serve_until(listener, sproxy::router(table, opts), shutdown_signal()).await;
        agent.abort();
        result?;
        Ok(())
    })
}

fn read_query_lines(path: &Path) -> CliResult<Vec<String>> {
    verify_input(path)?;
    Ok(std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

pub fn bench(r: &mut Resolver, a: BenchArgs) -> CliResult<()> {
    let started = now_unix();
    let config = BenchConfig {
        endpoint: r.require("endpoint", a.endpoint)?,
        model: r.get("model", a.model, "default".to_string())?,
        k: r.get("k", a.k, 1000)?,
        concurrency: r.get("concurrency", a.concurrency, 1)?,
        duration: Duration::from_secs_f64(r.get("duration", a.duration, 10.0)?),
        max_requests: r.get("max-requests", a.max_requests, 0)?,
    };
    let queries_path: PathBuf = r.require("queries", a.queries)?;
    let out: Option<PathBuf> = r.optional("out", a.out)?;
    let resolved = std::mem::take(r).finish()?;
    let queries = read_query_lines(&queries_path)?;
    let report = runtime()?.block_on(sbench::run(&config, &queries))?;
    eprintln!("{}", report.summary_line());
    if report.errors > 0 {
        warn!("{} requests failed", report.errors);
    }
    if let Some(out) = out {
        write_atomic(&out, &serde_json::to_vec_pretty(&report)?)?;
        let mut m = RunManifest::new("bench", resolved, None, started);
        m.input(&queries_path)?;
        m.output(&out)?;
        m.write(&manifest_path_for(&out))?;
    }
    Ok(())
}

pub fn eval(r: &mut Resolver, a: EvalArgs) -> CliResult<()> {
    let started = now_unix();
    let model = ModelPaths::resolve(r, a.model)?;
    let data: PathBuf = r.require("data", a.data)?;
    let n = r.get("n", a.n, 1024)?;
    let seed = r.get("seed", a.seed, 0)?;
    let popularity_k = r.get("popularity-k", a.popularity_k, 10)?;
    let latency_k = r.get("latency-k", a.latency_k, 1000)?;
    let latency_queries = r.get("latency-queries", a.latency_queries, 200)?;
    let endpoint: Option<String> = r.optional("endpoint", a.endpoint)?;
    let out: PathBuf = r.require("out", a.out)?;
    let resolved = std::mem::take(r).finish()?;

    let (servable, towers) = model.load()?;
    let files = ["items.tsv", "users.tsv", "heldout.tsv"].map(|f| data.join(f));
    for f in &files {
        verify_input(f)?;
    }
    let items = read_items(&files[0])?;
    let users = read_users(&files[1])?;
    let heldout = read_interactions(&files[2])?;
    let popularity: HashMap<String, f64> = items.iter().map(|i| (i.id.clone(), i.popularity as f64)).collect();
    let info_ = servable.info().clone();
    let encoded: Vec<EncodedItem> = items
        .iter()
        .map(|it| EncodedItem {
            id: it.id.clone(),
            tokens: encode_item(servable.vocab(), it, info_.features),
        })
        .collect();
    let store = FeatureStore::new(users, items)?;
    let queries: Vec<String> = heldout
        .iter()
        .map(|h| h.query.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut report = MetricReport {
        queries: heldout.len(),
        ..MetricReport::default()
    };

    let truth_files = ["item_clusters.tsv", "query_clusters.tsv"].map(|f| data.join(f));
    let mut used = vec![files[0].clone(), files[1].clone(), files[2].clone()];
    if truth_files.iter().all(|p| p.exists()) {
        for f in &truth_files {
            verify_input(f)?;
            used.push(f.clone());
        }
        let truth = GroundTruth::new(&read_truth(&truth_files[0])?, &read_truth(&truth_files[1])?);
        let q = heldout_quality(
            &towers,
            info_.beta,
            servable.vocab(),
            &store,
            &encoded,
            &heldout,
            &truth,
            info_.features,
            n,
            seed,
        )?;
        report.queries = q.queries;
        report.top1 = Some(q.top1);
        report.top10 = Some(q.top10);
        report.auc = Some(q.auc);
    } else {
        warn!("no ground-truth maps in {}; skipping top-k and AUC", data.display());
    }
    report.mean_retrieved_popularity = Some(mean_retrieved_popularity(&servable, &queries, &popularity, popularity_k)?);

    let sample: Vec<String> = queries.iter().take(latency_queries.max(1)).cloned().collect();
    match &endpoint {
        Some(url) => {
            let config = BenchConfig {
                endpoint: url.clone(),
                model: servable.name.clone(),
                k: latency_k,
                concurrency: 1,
                duration: Duration::from_secs(3600),
                max_requests: sample.len(),
            };
            let b = runtime()?.block_on(sbench::run(&config, &sample))?;
            if b.errors > 0 {
                warn!("{} of {} latency requests failed", b.errors, b.requests);
            }
            report.latency_p50_ms = Some(b.latency.p50_ms);
            report.latency_p99_ms = Some(b.latency.p99_ms);
            report.qps = Some(b.qps);
        }
        None => {
            let mut samples = Vec::with_capacity(sample.len());
            let t0 = Instant::now();
            for q in &sample {
                let t = Instant::now();
                servable.retrieve(q, &[], latency_k)?;
                samples.push(t.elapsed().as_secs_f64() * 1e3);
            }
            let l = LatencySummary::from_ms(&samples);
            report.latency_p50_ms = Some(l.p50_ms);
            report.latency_p99_ms = Some(l.p99_ms);
            report.qps = Some(sample.len() as f64 / t0.elapsed().as_secs_f64());
        }
    }
    eprintln!("{}", report.summary_line());
    write_atomic(&out, &serde_json::to_vec_pretty(&report)?)?;

    let mut m = RunManifest::new("eval", resolved, Some(seed), started);
    model.inputs(&mut m)?;
    for p in &used {
        m.input(p)?;
    }
    m.output(&out)?;
    m.write(&manifest_path_for(&out))
}

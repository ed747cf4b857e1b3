mod common;

use std::time::Duration;

use axum::body::Bytes;
use hyper::StatusCode;
use twotower_serve::bench::{self, BenchConfig};
use twotower_serve::client::{replay, HttpClient};
use twotower_serve::protocol::{hits_bytes, ErrorBody, RetrieveRequest, RetrieveResponse};
use twotower_serve::server::{self, ServerOptions};
use twotower_serve::stats::StatsReport;

fn client() -> HttpClient {
    HttpClient::new(Duration::from_secs(10))
}

#[tokio::test(flavor = "multi_thread")]
async fn answers_protocol() {
    let (s, queries) = common::servable("shop", 300, 1);
    let handle = server::spawn("127.0.0.1:0", server::router(s.clone(), ServerOptions::default())).await.unwrap();
    let base = handle.url();
    let c = client();

    let mut req = RetrieveRequest::new("shop", &queries[0], 10);
    req.debug = true;
    let r = c.retrieve(&base, &req).await.unwrap();
    assert_eq!(r.status, StatusCode::OK);
    let body: RetrieveResponse = r.json().unwrap();
    assert_eq!(body.hits.len(), 10);
    assert_eq!(body.hits, s.retrieve(&queries[0], &[], 10).unwrap().hits);
    let debug = body.debug.unwrap();
    assert_eq!(debug.tokens, s.encode(&queries[0]).0);
    assert_eq!(debug.heads, 2);

    // malformed body, then the same connection pool keeps working
    let r = c.post(&format!("{base}/v1/retrieve"), Bytes::from_static(b"{\"model\": ")).await.unwrap();
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert!(r.json::<ErrorBody>().unwrap().error.contains("malformed"));
    let r = c.retrieve(&base, &RetrieveRequest::new("shop", &queries[1], 5)).await.unwrap();
    assert_eq!(r.status, StatusCode::OK);

    let r = c.retrieve(&base, &RetrieveRequest::new("other", "x", 5)).await.unwrap();
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let r = c.retrieve(&base, &RetrieveRequest::new("shop", "x", 0)).await.unwrap();
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let mut bad = RetrieveRequest::new("shop", &queries[2], 5);
    bad.user_features = vec![u32::MAX];
    assert_eq!(c.retrieve(&base, &bad).await.unwrap().status, StatusCode::BAD_REQUEST);

    let r = c.retrieve(&base, &RetrieveRequest::new("shop", "zzzz qqqq", 5)).await.unwrap();
    let body: RetrieveResponse = r.json().unwrap();
    assert!(body.hits.is_empty());
    assert!(body.warning.is_some());

    let r = c.get(&format!("{base}/healthz")).await.unwrap();
    assert_eq!(&r.body[..], br#"{"status":"ok"}"#);
    let stats: StatsReport = c.get(&format!("{base}/stats")).await.unwrap().json().unwrap();
    assert_eq!(stats.requests, 7);
    assert_eq!(stats.errors, 4);
    handle.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn concurrent_replay_matches_sequential() {
    let (s, queries) = common::servable("shop", 2000, 2);
    let handle = server::spawn("127.0.0.1:0", server::router(s, ServerOptions::default())).await.unwrap();
    let url = format!("{}/v1/retrieve", handle.url());
    let bodies: Vec<Bytes> = (0..32_000)
        .map(|i| serde_json::to_vec(&RetrieveRequest::new("shop", &queries[i % queries.len()], 20)).unwrap().into())
        .collect();
    let c = client();
    let sequential = replay(&c, &url, bodies.clone(), 1).await;
    let concurrent = replay(&c, &url, bodies, 32).await;
    let mut compared = 0;
    for (a, b) in sequential.iter().zip(&concurrent) {
        let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
        assert_eq!(a.status, StatusCode::OK);
        assert_eq!(b.status, StatusCode::OK);
        assert_eq!(hits_bytes(&a.body), hits_bytes(&b.body));
        compared += 1;
    }
    assert_eq!(compared, 32_000);
    handle.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn in_flight_limit_refuses() {
    let (s, queries) = common::servable("shop", 50, 3);
    let handle = server::spawn("127.0.0.1:0", server::router(s, ServerOptions { max_in_flight: 0 })).await.unwrap();
    let r = client().retrieve(&handle.url(), &RetrieveRequest::new("shop", &queries[0], 5)).await.unwrap();
    assert_eq!(r.status, StatusCode::SERVICE_UNAVAILABLE);
    handle.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn bench_reports_latency() {
    let (s, queries) = common::servable("shop", 500, 4);
    let handle = server::spawn("127.0.0.1:0", server::router(s, ServerOptions::default())).await.unwrap();
    let mut config = BenchConfig {
        endpoint: handle.url(),
        model: "shop".into(),
        k: 10,
        concurrency: 1,
        duration: Duration::from_secs(1),
        max_requests: 0,
    };
    let one = bench::run(&config, &queries).await.unwrap();
    config.concurrency = 2;
    let two = bench::run(&config, &queries).await.unwrap();
    println!("{}\n{}", one.summary_line(), two.summary_line());
    assert_eq!(one.errors, 0);
    assert!(one.requests > 0);
    assert!(one.latency.p50_ms < 5.0, "{}", one.latency.p50_ms);
    handle.shutdown().await.unwrap();

    config.endpoint = "http://127.0.0.1:1".into();
    assert!(matches!(
        bench::run(&config, &queries).await,
        Err(twotower_serve::ServeError::Unhealthy { .. })
    ));
}

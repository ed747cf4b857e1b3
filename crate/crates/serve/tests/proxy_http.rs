mod common;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Duration;

use axum::routing::{get, post};
use axum::Router;
use hyper::StatusCode;
use twotower_serve::client::{replay, HttpClient};
use twotower_serve::protocol::{hits_bytes, RetrieveRequest, ROUTED_TO_HEADER};
use twotower_serve::proxy::{self, ProxyOptions, ShardTable};
use twotower_serve::server::{self, ServerOptions};

fn client() -> HttpClient {
    HttpClient::new(Duration::from_secs(10))
}

fn table(models: &[(&str, Vec<String>)]) -> Arc<ShardTable> {
    let map: BTreeMap<String, Vec<String>> = models.iter().map(|(m, u)| (m.to_string(), u.clone())).collect();
    Arc::new(ShardTable::new(map, 3).unwrap())
}

#[tokio::test(flavor = "multi_thread")]
async fn proxied_responses_equal_direct() {
    let (shop, queries) = common::servable("shop", 400, 1);
    let (books, _) = common::servable("books", 300, 2);
    let a = server::spawn("127.0.0.1:0", server::router(shop.clone(), ServerOptions::default())).await.unwrap();
    let b = server::spawn("127.0.0.1:0", server::router(shop, ServerOptions::default())).await.unwrap();
    let c = server::spawn("127.0.0.1:0", server::router(books, ServerOptions::default())).await.unwrap();
    let t = table(&[("shop", vec![a.url(), b.url()]), ("books", vec![c.url()])]);
    let p = server::spawn("127.0.0.1:0", proxy::router(t, ProxyOptions::default())).await.unwrap();
    let http = client();

    let mut routed: HashMap<String, usize> = HashMap::new();
    for q in &queries {
        for (model, direct) in [("shop", &a), ("books", &c)] {
            let req = RetrieveRequest::new(model, q, 50);
            let d = http.retrieve(&direct.url(), &req).await.unwrap();
            let v = http.retrieve(&p.url(), &req).await.unwrap();
            assert_eq!(d.status, v.status);
            assert_eq!(hits_bytes(&d.body), hits_bytes(&v.body));
            let to = v.headers[ROUTED_TO_HEADER].to_str().unwrap().to_string();
            *routed.entry(to).or_default() += 1;
        }
    }
    assert_eq!(routed[&a.url()], 50);
    assert_eq!(routed[&b.url()], 50);
    assert_eq!(routed[&c.url()], 100);

    let r = http.retrieve(&p.url(), &RetrieveRequest::new("nope", "x", 5)).await.unwrap();
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let r = http.post(&format!("{}/v1/retrieve", p.url()), "not json".into()).await.unwrap();
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let r = http.retrieve(&p.url(), &RetrieveRequest::new("shop", &queries[0], 5)).await.unwrap();
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(http.get(&format!("{}/healthz", p.url())).await.unwrap().status, StatusCode::OK);

    for h in [p, a, b, c] {
        h.shutdown().await.unwrap();
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn survives_backend_kill_mid_load() {
    let (shop, queries) = common::servable("shop", 400, 3);
    let a = server::spawn("127.0.0.1:0", server::router(shop.clone(), ServerOptions::default())).await.unwrap();
    let b = server::spawn("127.0.0.1:0", server::router(shop, ServerOptions::default())).await.unwrap();
    let b_url = b.url();
    let t = table(&[("shop", vec![a.url(), b.url()])]);
    let opts = ProxyOptions {
        health_interval: Duration::from_millis(100),
        ..ProxyOptions::default()
    };
    let agent = proxy::spawn_health_agent(t.clone(), opts);
    let p = server::spawn("127.0.0.1:0", proxy::router(t.clone(), opts)).await.unwrap();
    let url = format!("{}/v1/retrieve", p.url());
    let bodies = |n: usize| -> Vec<axum::body::Bytes> {
        (0..n)
            .map(|i| serde_json::to_vec(&RetrieveRequest::new("shop", &queries[i % queries.len()], 10)).unwrap().into())
            .collect()
    };
    let http = client();

    let load = {
        let (http, url, bodies) = (http.clone(), url.clone(), bodies(3000));
        tokio::spawn(async move { replay(&http, &url, bodies, 8).await })
    };
    tokio::time::sleep(Duration::from_millis(150)).await;
    b.shutdown().await.unwrap();
    let during = load.await.unwrap();
    let failed = during.iter().filter(|r| !matches!(r, Ok(r) if r.status == StatusCode::OK)).count();
    println!("failures during kill: {failed} of {}", during.len());
    for r in during.iter().filter(|r| !matches!(r, Ok(r) if r.status == StatusCode::OK)) {
        match r {
            Ok(r) => println!("{} {}", r.status, String::from_utf8_lossy(&r.body)),
            Err(e) => println!("{e}"),
        }
    }

    for _ in 0..50 {
        if !t.snapshot()[&b_url].healthy {
            break;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    assert!(!t.snapshot()[&b_url].healthy, "dead backend not ejected");
    let after = replay(&http, &url, bodies(1000), 8).await;
    for r in &after {
        let r = r.as_ref().unwrap();
        assert_eq!(r.status, StatusCode::OK);
        assert_eq!(r.headers[ROUTED_TO_HEADER].to_str().unwrap(), a.url());
    }

    agent.abort();
    p.shutdown().await.unwrap();
    a.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn slow_backend_times_out_and_dead_model_is_unavailable() {
    let slow = Router::new()
        .route(
            "/v1/retrieve",
            post(|| async {
                tokio::time::sleep(Duration::from_millis(1500)).await;
                "{}"
            }),
        )
        .route("/healthz", get(|| async { "{\"status\":\"ok\"}" }));
    let s = server::spawn("127.0.0.1:0", slow).await.unwrap();
    let t = table(&[("slow", vec![s.url()]), ("gone", vec!["http://127.0.0.1:1".into()])]);
    let opts = ProxyOptions {
        timeout: Duration::from_millis(200),
        ..ProxyOptions::default()
    };
    let p = server::spawn("127.0.0.1:0", proxy::router(t.clone(), opts)).await.unwrap();
    let http = client();
    let r = http.retrieve(&p.url(), &RetrieveRequest::new("slow", "x", 1)).await.unwrap();
    assert_eq!(r.status, StatusCode::GATEWAY_TIMEOUT);

    // transport failures count as strikes; once ejected the model is unavailable
    let mut statuses = Vec::new();
    for _ in 0..4 {
        statuses.push(http.retrieve(&p.url(), &RetrieveRequest::new("gone", "x", 1)).await.unwrap().status);
    }
    assert_eq!(statuses[..3], [StatusCode::BAD_GATEWAY; 3]);
    assert_eq!(statuses[3], StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(http.get(&format!("{}/healthz", p.url())).await.unwrap().status, StatusCode::OK);
    p.shutdown().await.unwrap();
    drop(s);
}

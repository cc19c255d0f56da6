//! HTTP API over mock backends, driven in-process with `tower::ServiceExt`.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine;
use memesentinel::media::tiny_png;
use memesentinel::mock::MockBackends;
use memesentinel_server::api::{router, AppState};
use memesentinel_server::assemble::assemble;
use memesentinel_server::config::ServiceConfig;
use memesentinel_server::store::Store;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pipeline")
}

fn fixture_png(name: &str) -> Vec<u8> {
    std::fs::read(fixtures().join(format!("{name}.png"))).unwrap()
}

struct Harness {
    app: Router,
    state: AppState,
    mock: MockBackends,
    config: ServiceConfig,
    _dir: TempDir,
}

fn mock_config(dir: &TempDir) -> ServiceConfig {
    let mut config = ServiceConfig::default();
    config.backends.mock = true;
    config.backends.fixtures = Some(fixtures());
    config.store.path = dir.path().join("store.jsonl");
    config
}

fn harness_with(dir: TempDir, config: ServiceConfig) -> Harness {
    let assembled = assemble(&config).unwrap();
    let store = Arc::new(Store::open(&config.store.path, config.store.compact_every).unwrap());
    let state = AppState::new(assembled.pipeline, store, config.clone());
    Harness {
        app: router(state.clone()),
        state,
        mock: assembled.mock.unwrap(),
        config,
        _dir: dir,
    }
}

fn harness(tweak: impl FnOnce(&mut ServiceConfig)) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let mut config = mock_config(&dir);
    tweak(&mut config);
    harness_with(dir, config)
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn raw(bytes: Vec<u8>) -> Request<Body> {
    Request::post("/v1/classify")
        .header("content-type", "application/octet-stream")
        .body(Body::from(bytes))
        .unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post_json(uri: &str, body: Value) -> Request<Body> {
    Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

async fn classify(h: &Harness, name: &str) -> Value {
    let (status, body) = send(&h.app, raw(fixture_png(name))).await;
    match status {
        StatusCode::OK => body,
        StatusCode::BAD_GATEWAY => body["record"].clone(),
        other => panic!("{name}: {other} {body}"),
    }
}

#[tokio::test]
async fn override_round_trip() {
    let h = harness(|_| {});
    let record = classify(&h, "english").await;
    assert_eq!(record["effective_decision"], "No");
    let id = record["record_id"].as_str().unwrap();

    let uri = format!("/v1/records/{id}/override");
    let (status, updated) = send(
        &h.app,
        post_json(&uri, json!({"decision": "Yes", "moderator_id": "mod-7", "note": "dog whistle"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(updated["effective_decision"], "Yes");
    assert_eq!(updated["verdict"]["harmful"], "No", "model verdict is kept");
    assert_eq!(updated["overrides"][0]["moderator_id"], "mod-7");

    let (_, fetched) = send(&h.app, get(&format!("/v1/records/{id}"))).await;
    assert_eq!(fetched, updated);

    // the latest override wins
    let (_, again) = send(&h.app, post_json(&uri, json!({"decision": "No", "moderator_id": "mod-8"}))).await;
    assert_eq!(again["effective_decision"], "No");
    assert_eq!(again["overrides"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn override_validation() {
    let h = harness(|_| {});
    let id = classify(&h, "english").await["record_id"].as_str().unwrap().to_string();
    let uri = format!("/v1/records/{id}/override");

    let (status, _) = send(&h.app, post_json("/v1/records/nope/override", json!({"decision": "maybe"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = send(&h.app, get("/v1/records/nope")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let bad_json = Request::post(&uri).header("content-type", "application/json").body(Body::from("{")).unwrap();
    assert_eq!(send(&h.app, bad_json).await.0, StatusCode::BAD_REQUEST);

    let long_note = "x".repeat(2001);
    for body in [
        json!({"decision": "maybe", "moderator_id": "m"}),
        json!({"moderator_id": "m"}),
        json!({"decision": "Yes"}),
        json!({"decision": "Yes", "moderator_id": "   "}),
        json!({"decision": "Yes", "moderator_id": "m", "note": 5}),
        json!({"decision": "Yes", "moderator_id": "m", "note": long_note}),
    ] {
        let (status, reply) = send(&h.app, post_json(&uri, body.clone())).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
        assert!(reply["error"].is_string());
    }
    let ok_note = "x".repeat(2000);
    let (status, _) = send(&h.app, post_json(&uri, json!({"decision": "yes", "moderator_id": "m", "note": ok_note}))).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn pagination() {
    let h = harness(|_| {});
    for _ in 0..5 {
        classify(&h, "english").await;
    }
    let mut seen = Vec::new();
    for page in 1..=3 {
        let (status, body) = send(&h.app, get(&format!("/v1/records?page={page}&page_size=2"))).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!((body["total"].as_u64(), body["total_pages"].as_u64()), (Some(5), Some(3)));
        let items = body["items"].as_array().unwrap();
        assert_eq!(items.len(), if page == 3 { 1 } else { 2 });
        seen.extend(items.iter().map(|r| r["record_id"].as_str().unwrap().to_string()));
    }
    seen.dedup();
    assert_eq!(seen.len(), 5);
    let (_, past_end) = send(&h.app, get("/v1/records?page=4&page_size=2")).await;
    assert!(past_end["items"].as_array().unwrap().is_empty());
    for bad in ["page=0", "page_size=0", "page_size=501", "color=red"] {
        assert_eq!(send(&h.app, get(&format!("/v1/records?{bad}"))).await.0, StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
    }
}

#[tokio::test]
async fn filters() {
    let h = harness(|_| {});
    let english = classify(&h, "english").await;
    classify(&h, "chinese").await;
    classify(&h, "retry").await;
    classify(&h, "failure").await;

    let count = |body: &Value| body["total"].as_u64().unwrap();
    let q = |s: &str| get(&format!("/v1/records?{s}"));
    assert_eq!(count(&send(&h.app, q("")).await.1), 4);
    assert_eq!(count(&send(&h.app, q("decision=yes")).await.1), 2);
    assert_eq!(count(&send(&h.app, q("harmful=no")).await.1), 1);
    assert_eq!(count(&send(&h.app, q("decision=unresolved")).await.1), 1);
    assert_eq!(count(&send(&h.app, q("unresolved=true")).await.1), 1);
    assert_eq!(count(&send(&h.app, q("victim_group=WOMEN")).await.1), 1);
    assert_eq!(count(&send(&h.app, q("from=2000-01-01T00:00:00Z&to=2999-01-01T00:00:00Z")).await.1), 4);
    assert_eq!(count(&send(&h.app, q("to=2000-01-01T00:00:00Z")).await.1), 0);

    // filtering follows the moderator's decision, not the model's
    let id = english["record_id"].as_str().unwrap();
    send(&h.app, post_json(&format!("/v1/records/{id}/override"), json!({"decision": "Yes", "moderator_id": "m"}))).await;
    assert_eq!(count(&send(&h.app, q("decision=yes")).await.1), 3);
    assert_eq!(count(&send(&h.app, q("decision=no")).await.1), 0);
}

#[tokio::test]
async fn health_reports_each_backend() {
    let h = harness(|_| {});
    let (status, body) = send(&h.app, get("/v1/health")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["probes"].as_array().unwrap().len(), 3);

    h.mock.vlm.set_down(true);
    let (status, body) = send(&h.app, get("/v1/health")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "degraded");
    assert_eq!(body["degraded"], json!(["vlm"]));
    h.mock.vlm.set_down(false);

    let none = harness(|c| {
        c.stages.ocr = false;
        c.stages.vlm = false;
    });
    let (_, body) = send(&none.app, get("/v1/health")).await;
    assert_eq!(body["status"], "ok");
    assert!(body["probes"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn rejects_bad_uploads() {
    let h = harness(|c| c.server.max_body_bytes = 1000);
    let (status, _) = send(&h.app, raw(b"definitely not an image".to_vec())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let mut big = tiny_png(1);
    big.resize(5000, 0);
    assert_eq!(send(&h.app, raw(big.clone())).await.0, StatusCode::PAYLOAD_TOO_LARGE);
    let huge = vec![0u8; 200 * 1024];
    assert_eq!(send(&h.app, raw(huge)).await.0, StatusCode::PAYLOAD_TOO_LARGE);

    let (status, _) = send(&h.app, post_json("/v1/classify", json!({"image_url": "ftp://x/y.png"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send(&h.app, post_json("/v1/classify", json!({"nothing": 1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(h.state.store.is_empty());
}

#[tokio::test]
async fn data_url_and_image_endpoint() {
    let h = harness(|_| {});
    let png = fixture_png("english");
    let url = format!("data:image/png;base64,{}", base64::engine::general_purpose::STANDARD.encode(&png));
    let (status, record) = send(&h.app, post_json("/v1/classify", json!({ "image_url": url }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(record["verdict"]["harmful"], "No");

    let hash = record["image_hash"].as_str().unwrap();
    let resp = h.app.clone().oneshot(get(&format!("/v1/images/{hash}"))).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "image/png");
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    assert_eq!(bytes.to_vec(), png);
    assert_eq!(send(&h.app, get("/v1/images/0000")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn busy_or_disabled_is_503() {
    let h = harness(|c| c.server.concurrency = 1);
    let _held = h.state.limiter.clone().try_acquire_owned().unwrap();
    assert_eq!(send(&h.app, raw(fixture_png("english"))).await.0, StatusCode::SERVICE_UNAVAILABLE);
    drop(_held);
    assert_eq!(send(&h.app, raw(fixture_png("english"))).await.0, StatusCode::OK);

    let off = harness(|c| c.stages.vlm = false);
    assert_eq!(send(&off.app, raw(fixture_png("english"))).await.0, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn records_survive_restart() {
    let h = harness(|_| {});
    let id = classify(&h, "chinese").await["record_id"].as_str().unwrap().to_string();
    send(&h.app, post_json(&format!("/v1/records/{id}/override"), json!({"decision": "No", "moderator_id": "m"}))).await;
    let (_, before) = send(&h.app, get(&format!("/v1/records/{id}"))).await;

    let Harness { config, _dir, .. } = h;
    let reopened = harness_with(_dir, config);
    let (status, after) = send(&reopened.app, get(&format!("/v1/records/{id}"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(after, before);
    assert_eq!(after["effective_decision"], "No");
}

#[tokio::test]
async fn api_key_guards_everything_but_health() {
    let h = harness(|c| c.server.api_key = Some("s3cret".into()));
    assert_eq!(send(&h.app, get("/v1/records")).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(send(&h.app, raw(fixture_png("english"))).await.0, StatusCode::UNAUTHORIZED);
    let wrong = Request::get("/v1/records").header("x-api-key", "nope").body(Body::empty()).unwrap();
    assert_eq!(send(&h.app, wrong).await.0, StatusCode::UNAUTHORIZED);
    let right = Request::get("/v1/records").header("x-api-key", "s3cret").body(Body::empty()).unwrap();
    assert_eq!(send(&h.app, right).await.0, StatusCode::OK);
    assert_eq!(send(&h.app, get("/v1/health")).await.0, StatusCode::OK);
}

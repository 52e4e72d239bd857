use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use keyguide::agent::AgentConfig;
use keyguide::matcher::{MatcherConfig, MatcherModel};
use keyguide::predictor::{PredictorConfig, PredictorModel};
use keyguide::synthetic::chain_corpus;
use keyguide_cli::server::{router, App, Models, IDEMPOTENCY_HEADER};
use serde_json::{json, Value};
use tower::ServiceExt;

const MAX_TURNS: usize = 4;

fn app(log: Option<&Path>, reveal: bool) -> Router {
    let ds = chain_corpus(6, 3).prepare().unwrap();
    let g = &ds.grounding;
    let predictor = PredictorModel::new(
        PredictorConfig {
            embed_dim: 6,
            hidden: 6,
            relation_buckets: 2,
            use_concepts: true,
            seed: 1,
        },
        g,
    )
    .unwrap();
    let matcher = MatcherModel::new(
        MatcherConfig {
            dim: 6,
            relation_buckets: 2,
            seed: 1,
            ..MatcherConfig::default()
        },
        g,
    )
    .unwrap();
    let models = Models::new(ds, Box::new(predictor), matcher, AgentConfig::default(), MAX_TURNS, 5).unwrap();
    router(Arc::new(App::new(models, log, reveal).unwrap()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>, key: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(k) = key {
        req = req.header(IDEMPOTENCY_HEADER, k);
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn create(app: &Router, target: &str) -> String {
    let (status, v) = call(app, "POST", "/sessions", Some(json!({ "target": target })), None).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    v["id"].as_str().unwrap().to_string()
}

fn error_code(v: &Value) -> &str {
    v["error"]["code"].as_str().unwrap_or("")
}

#[tokio::test]
async fn message_round_trip_reports_diagnostics() {
    let app = app(None, false);
    let (status, v) = call(&app, "POST", "/sessions", None, None).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert!(v.get("target").is_none(), "target leaked: {v}");
    let (_, v) = call(&app, "POST", "/sessions", Some(json!({"target": "winter"})), None).await;
    assert!(v.get("target").is_none(), "target leaked: {v}");
    let id = v["id"].as_str().unwrap();

    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/message"), Some(json!({"text": "tell me more about apple"})), None).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert!(v["reply"].is_string());
    assert_eq!(v["agent_turns"], 1);
    let d = &v["diagnostics"];
    let predicted = d["predicted"].as_array().unwrap();
    assert!(!predicted.is_empty() && predicted.len() <= 3);
    for p in predicted {
        let prob = p["probability"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&prob));
        assert!(p["keyword"].is_string());
    }
    assert!(d["tier"].is_u64());
    assert!(d["decision"]["chosen"].is_string());

    let (status, t) = call(&app, "GET", &format!("/sessions/{id}/trace"), None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(t["transcript"].as_array().unwrap().len(), 2);
    assert!(t.get("target").is_none());
    assert_eq!(t["diagnostics"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn validation_errors() {
    let app = app(None, false);
    let (status, v) = call(&app, "POST", "/sessions", Some(json!({"target": "unicorn"})), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_code(&v), "validation");
    let (status, _) = call(&app, "POST", "/sessions", Some(json!({"goal": "apple"})), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let id = create(&app, "winter").await;
    let uri = format!("/sessions/{id}/message");
    let (status, v) = call(&app, "POST", &uri, Some(json!({"words": "hi"})), None).await;
    assert_eq!((status, error_code(&v)), (StatusCode::UNPROCESSABLE_ENTITY, "validation"));
    let (status, _) = call(&app, "POST", &uri, Some(json!({"text": "   "})), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, "GET", "/graph/path?from=apple", None, None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn unknown_resources_are_404() {
    let app = app(None, false);
    for (method, uri, body) in [
        ("GET", "/sessions/s999999/trace", None),
        ("POST", "/sessions/nope/message", Some(json!({"text": "hi"}))),
        ("POST", "/sessions/nope/rating", Some(json!({"smoothness": 3}))),
        ("GET", "/graph/path?from=apple&to=unicorn", None),
    ] {
        let (status, v) = call(&app, method, uri, body, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(error_code(&v), "not_found");
        assert!(v["error"]["message"].is_string());
    }
}

#[tokio::test]
async fn rating_follows_session_state() {
    let app = app(None, true);
    let id = create(&app, "winter").await;
    let rating = format!("/sessions/{id}/rating");
    let (status, v) = call(&app, "POST", &rating, Some(json!({"smoothness": 3})), None).await;
    assert_eq!((status, error_code(&v)), (StatusCode::CONFLICT, "state"));

    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/end"), None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "ended");
    assert_eq!(v["target"], "winter");
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/message"), Some(json!({"text": "hi"})), None).await;
    assert_eq!((status, error_code(&v)), (StatusCode::CONFLICT, "state"));

    for bad in [0, 6, -1, 300] {
        let (status, _) = call(&app, "POST", &rating, Some(json!({"smoothness": bad})), None).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
    }
    let (status, v) = call(&app, "POST", &rating, Some(json!({"smoothness": 4})), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["smoothness_rating"], 4);
}

#[tokio::test]
async fn mentioning_the_target_succeeds() {
    let app = app(None, true);
    let (_, v) = call(&app, "POST", "/sessions", Some(json!({"target": "soccer"})), None).await;
    assert_eq!(v["target"], "soccer");
    let id = v["id"].as_str().unwrap();
    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/message"), Some(json!({"text": "i love soccer"})), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "success");
    assert!(v["reply"].is_null());
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/rating"), Some(json!({"smoothness": 5})), None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn turn_cap_ends_the_session() {
    let app = app(None, false);
    let id = create(&app, "winter").await;
    let uri = format!("/sessions/{id}/message");
    let mut last = Value::Null;
    for i in 0..MAX_TURNS {
        let (status, v) = call(&app, "POST", &uri, Some(json!({"text": format!("line {i}")})), None).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        last = v;
        if last["status"] != "active" {
            break;
        }
    }
    assert_ne!(last["status"], "active");
}

#[tokio::test]
async fn idempotency_keys_replay_responses() {
    let app = app(None, false);
    let (_, a) = call(&app, "POST", "/sessions", Some(json!({})), Some("c1")).await;
    let (_, b) = call(&app, "POST", "/sessions", Some(json!({})), Some("c1")).await;
    assert_eq!(a, b);
    let id = a["id"].as_str().unwrap();
    let uri = format!("/sessions/{id}/message");
    let (_, first) = call(&app, "POST", &uri, Some(json!({"text": "hello"})), Some("m1")).await;
    let (_, again) = call(&app, "POST", &uri, Some(json!({"text": "hello"})), Some("m1")).await;
    assert_eq!(first, again);
    let (_, t) = call(&app, "GET", &format!("/sessions/{id}/trace"), None, None).await;
    assert_eq!(t["transcript"].as_array().unwrap().len(), 2);
    assert_eq!(t["agent_turns"], 1);
}

#[tokio::test]
async fn graph_path_lists_labels() {
    let app = app(None, false);
    let (status, v) = call(&app, "GET", "/graph/path?from=apple&to=pizza", None, None).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let labels: Vec<&str> = v["path"].as_array().unwrap().iter().map(|l| l.as_str().unwrap()).collect();
    assert_eq!(labels, ["apple", "river", "guitar", "garden", "pizza"]);
    assert!(v["distance"].as_f64().unwrap() > 0.0);
    let (_, v) = call(&app, "GET", "/graph/path?from=river&to=river", None, None).await;
    assert_eq!(v["distance"], 0.0);
}

#[tokio::test]
async fn log_replay_restores_sessions() {
    let tmp = tempfile::tempdir().unwrap();
    let log = tmp.path().join("sessions.jsonl");
    let trace = {
        let app = app(Some(&log), false);
        let id = create(&app, "winter").await;
        call(&app, "POST", &format!("/sessions/{id}/message"), Some(json!({"text": "good morning"})), None).await;
        call(&app, "POST", &format!("/sessions/{id}/end"), None, None).await;
        call(&app, "POST", &format!("/sessions/{id}/rating"), Some(json!({"smoothness": 2})), None).await;
        call(&app, "GET", &format!("/sessions/{id}/trace"), None, None).await.1
    };
    let app = app(Some(&log), false);
    let id = trace["id"].as_str().unwrap();
    let (status, again) = call(&app, "GET", &format!("/sessions/{id}/trace"), None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(trace, again);
    assert_eq!(again["smoothness_rating"], 2);
    let next = create(&app, "winter").await;
    assert_ne!(next, id);
}

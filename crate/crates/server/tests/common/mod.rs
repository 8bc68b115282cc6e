#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, LazyLock};

use adlcoach_core::config::AppConfig;
use adlcoach_core::dialogue::{DialogueEngine, SessionManager};
use adlcoach_core::generation::{LlmClient, MockLlm};
use adlcoach_server::{build_state, router, AppState};
use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use tower::ServiceExt;

pub const MOCK_REPLY: &str = "I get by most days. It just takes me a while.";

pub fn config_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/data/adlcoach.json")
}

pub fn config() -> AppConfig {
    AppConfig::load(&config_path()).expect("example config loads")
}

/// Engine trained once per test binary.
static ENGINE: LazyLock<DialogueEngine> = LazyLock::new(|| config().build_engine().expect("engine builds"));

pub fn engine_with(llm: Arc<dyn LlmClient>) -> DialogueEngine {
    let mut e = DialogueEngine::new(
        ENGINE.store.clone(),
        ENGINE.functioning.clone(),
        ENGINE.domain_model.clone(),
        ENGINE.intent_model.clone(),
        ENGINE.scorer.clone(),
        ENGINE.routing.clone(),
        llm,
    );
    e.llm_request = ENGINE.llm_request.clone();
    e
}

pub fn state_with(llm: Arc<dyn LlmClient>) -> Arc<AppState> {
    Arc::new(AppState::new(engine_with(llm), SessionManager::new(), "kb_grounded"))
}

pub fn state() -> Arc<AppState> {
    state_with(Arc::new(MockLlm::fixed(MOCK_REPLY)))
}

pub fn app() -> Router {
    router(state())
}

pub fn full_state() -> Arc<AppState> {
    Arc::new(build_state(&config()).expect("state builds"))
}

pub async fn send(app: &Router, method: Method, uri: &str, body: Option<&str>) -> (StatusCode, Option<String>, String) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let ctype = resp
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, ctype, String::from_utf8(bytes.to_vec()).unwrap())
}

pub async fn json(app: &Router, method: Method, uri: &str, body: Option<&str>) -> (StatusCode, serde_json::Value) {
    let (status, _, text) = send(app, method, uri, body).await;
    let v = if text.is_empty() {
        serde_json::Value::Null
    } else {
        serde_json::from_str(&text).unwrap_or_else(|e| panic!("{uri}: non-JSON body {text:?}: {e}"))
    };
    (status, v)
}

pub async fn new_session(app: &Router, profile: &str) -> String {
    let (status, v) = json(app, Method::POST, "/sessions", Some(&format!(r#"{{"profile_id":"{profile}"}}"#))).await;
    assert!(status.is_success(), "{status} {v}");
    v["session_id"].as_str().unwrap().to_string()
}

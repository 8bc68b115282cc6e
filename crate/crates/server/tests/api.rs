mod common;

use std::sync::Arc;

use adlcoach_core::generation::MockLlm;
use adlcoach_server::router;
use axum::http::{Method, StatusCode};
use common::{app, json, new_session, send};
use serde_json::json;

#[tokio::test]
async fn health_reports_fixture_profile_count() {
    let (status, v) = json(&app(), Method::GET, "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v, json!({"status": "ok", "profiles": 10}));
}

#[tokio::test]
async fn profiles_list_has_summary_fields() {
    let (status, v) = json(&app(), Method::GET, "/profiles", None).await;
    assert_eq!(status, StatusCode::OK);
    let list = v.as_array().unwrap();
    assert_eq!(list.len(), 10);
    let p = list.iter().find(|p| p["id"] == "3b1").unwrap();
    assert_eq!(p["avg_rating"], json!(3.41));
    let mut keys: Vec<&str> = p.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["age_years", "avg_rating", "gender", "id"]);
}

#[tokio::test]
async fn unknown_profile_is_not_found() {
    let (status, v) = json(&app(), Method::POST, "/sessions", Some(r#"{"profile_id":"nobody"}"#)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "not_found");
    assert!(!v["message"].as_str().unwrap().is_empty());
}

#[tokio::test]
async fn bathing_question_returns_a_participant_turn() {
    let app = app();
    let id = new_session(&app, "3b86").await;
    let (status, turn) = json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/messages"),
        Some(r#"{"text":"Tell me about how bathing goes for you."}"#),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(turn["role"], "participant");
    assert_eq!(turn["source"], "knowledge_base");
    assert_eq!(turn["text"], "Bathing goes okay for me, mostly.");

    let (status, hist) = json(&app, Method::GET, &format!("/sessions/{id}/history"), None).await;
    assert_eq!(status, StatusCode::OK);
    let hist = hist.as_array().unwrap();
    assert_eq!(hist.len(), 2);
    assert_eq!(hist[0]["role"], "assessor");
    assert_eq!(hist[1], turn);
}

#[tokio::test]
async fn message_errors_are_typed() {
    let app = app();
    let id = new_session(&app, "3b1").await;
    let path = format!("/sessions/{id}/messages");
    for (body, code) in [
        (Some(r#"{"text":"   "}"#), "bad_request"),
        (Some(r#"{"text":5}"#), "bad_request"),
        (Some("{"), "bad_request"),
        (None, "bad_request"),
    ] {
        let (status, v) = json(&app, Method::POST, &path, body).await;
        assert_eq!(v["code"], code, "{body:?}");
        assert_eq!(status, StatusCode::BAD_REQUEST);
    }
    let (status, v) = json(&app, Method::POST, "/sessions/nope/messages", Some(r#"{"text":"hi"}"#)).await;
    assert_eq!((status, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
    let (status, _) = json(&app, Method::GET, "/sessions/nope/history", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn llm_outage_still_answers_with_a_scripted_turn() {
    let app = router(common::state_with(Arc::new(MockLlm::unavailable())));
    let id = new_session(&app, "3b1").await;
    let (status, turn) = json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/messages"),
        Some(r#"{"text":"How do you pay your bills?"}"#),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(turn["source"], "scripted");
    assert!(turn["error"].is_string());
}

#[tokio::test]
async fn ratings_feed_the_report() {
    let app = app();
    let (status, v) = json(&app, Method::GET, "/ratings/report", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["rows"], json!([]));

    let id = new_session(&app, "3b1").await;
    let rate = |rater: &str, s: u8, p: u8| {
        format!(
            r#"{{"session_id":"{id}","rater_id":"{rater}","sensibleness":{s},"specificity":{p},"favorite":true,"realistic":false}}"#
        )
    };
    let (status, _, body) = send(&app, Method::POST, "/ratings", Some(&rate("a", 5, 4))).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    assert!(body.is_empty());
    // resubmission by the same rater replaces the earlier rating
    send(&app, Method::POST, "/ratings", Some(&rate("a", 6, 6))).await;
    send(&app, Method::POST, "/ratings", Some(&rate("b", 3, 3))).await;

    let (_, v) = json(&app, Method::GET, "/ratings/report", None).await;
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["system"], "kb_grounded");
    assert_eq!(rows[0]["ratings"], 2);
    assert_eq!(rows[0]["sensibleness"], json!(4.5));
    assert_eq!(rows[0]["favorite"], 2);
    assert_eq!(rows[0]["realistic"], 0);
}

#[tokio::test]
async fn invalid_ratings_are_rejected() {
    let app = app();
    let id = new_session(&app, "3b1").await;
    let body = |s: u8, sid: &str| {
        format!(r#"{{"session_id":"{sid}","sensibleness":{s},"specificity":3,"favorite":false,"realistic":true}}"#)
    };
    for s in [0u8, 7] {
        let (status, v) = json(&app, Method::POST, "/ratings", Some(&body(s, &id))).await;
        assert_eq!((status, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("bad_request")));
    }
    let (status, _) = json(&app, Method::POST, "/ratings", Some(&body(3, "ghost"))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = json(&app, Method::POST, "/ratings", Some(&body(1, &id).replace("true", "\"yes\""))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_routes_and_methods_yield_api_errors() {
    let app = app();
    for (method, uri) in [
        (Method::GET, "/nope"),
        (Method::DELETE, "/health"),
        (Method::GET, "/sessions"),
        (Method::PUT, "/ratings/report"),
    ] {
        let (status, ctype, body) = send(&app, method.clone(), uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{method} {uri}");
        assert_eq!(ctype.as_deref(), Some("application/json"));
        let v: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(v["code"], "not_found");
    }
}

#[tokio::test]
async fn session_logs_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::config();
    cfg.data_dir = Some(dir.path().to_path_buf());
    let app = router(Arc::new(adlcoach_server::build_state(&cfg).unwrap()));
    let id = new_session(&app, "4d4").await;
    json(&app, Method::POST, &format!("/sessions/{id}/messages"), Some(r#"{"text":"Do you need any help with dressing?"}"#)).await;
    let (_, before) = json(&app, Method::GET, &format!("/sessions/{id}/history"), None).await;

    let app = router(Arc::new(adlcoach_server::build_state(&cfg).unwrap()));
    let (status, after) = json(&app, Method::GET, &format!("/sessions/{id}/history"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before, after);
}

#[tokio::test]
async fn broken_config_fails_before_binding() {
    let mut cfg = common::config();
    cfg.store_dir = "/definitely/missing".into();
    let err = adlcoach_server::serve(&cfg).await.unwrap_err();
    assert!(matches!(err, adlcoach_server::ServerError::Config(_)), "{err}");
}

#[tokio::test]
async fn graceful_shutdown_returns_cleanly() {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(adlcoach_server::serve_with_shutdown(listener, common::state(), async {
        let _ = rx.await;
    }));
    tx.send(()).unwrap();
    server.await.unwrap().unwrap();
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

    #[test]
    fn ratings_are_accepted_exactly_inside_the_scale(s in 0u8..=8, p in 0u8..=8, fav: bool, real: bool) {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        let (status, code) = rt.block_on(async {
            let app = app();
            let id = new_session(&app, "3b1").await;
            let body = format!(
                r#"{{"session_id":"{id}","sensibleness":{s},"specificity":{p},"favorite":{fav},"realistic":{real}}}"#
            );
            let (status, v) = json(&app, Method::POST, "/ratings", Some(&body)).await;
            (status, v["code"].as_str().map(String::from))
        });
        let valid = (1..=6).contains(&s) && (1..=6).contains(&p);
        if valid {
            proptest::prop_assert_eq!(status, StatusCode::NO_CONTENT);
        } else {
            proptest::prop_assert_eq!(status, StatusCode::BAD_REQUEST);
            proptest::prop_assert_eq!(code.as_deref(), Some("bad_request"));
        }
    }
}

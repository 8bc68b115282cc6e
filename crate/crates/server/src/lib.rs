//! JSON-over-HTTP front end for the dialogue engine.
//!
//! Routes:
//!
//! | method | path                      | body                   | reply           |
//! |--------|---------------------------|------------------------|-----------------|
//! | GET    | `/health`                 |                        | status, count   |
//! | GET    | `/profiles`               |                        | profile list    |
//! | POST   | `/sessions`               | `{profile_id}`         | `{session_id}`  |
//! | POST   | `/sessions/{id}/messages` | `{text}`               | participant turn|
//! | GET    | `/sessions/{id}/history`  |                        | turn list       |
//! | POST   | `/ratings`                | rating fields          | 204             |
//! | GET    | `/ratings/report`         |                        | SSA report      |
//!
//! Every error is an [`ApiError`] JSON object.

use std::collections::BTreeMap;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use adlcoach_core::config::{AppConfig, ConfigError};
use adlcoach_core::dialogue::{DialogueEngine, DialogueError, SessionManager, Turn};
use adlcoach_core::evalharness::{ssa_report, Rating, SsaReport};
use adlcoach_core::profiles::avg_rating;
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    NotFound,
    UpstreamUnavailable,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::UpstreamUnavailable => StatusCode::BAD_GATEWAY,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        let message = message.into();
        Self {
            code,
            message: if message.is_empty() { format!("{code:?}") } else { message },
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(self)).into_response()
    }
}

impl From<DialogueError> for ApiError {
    fn from(e: DialogueError) -> Self {
        match e {
            DialogueError::EmptyQuery => ApiError::bad_request(e.to_string()),
            DialogueError::UnknownProfile(_) | DialogueError::UnknownSession(_) => {
                ApiError::not_found(e.to_string())
            }
            DialogueError::Profile(_) | DialogueError::Prompt(_) | DialogueError::Log { .. } => {
                log::error!("dialogue failure: {e}");
                ApiError::internal(e.to_string())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub id: String,
    pub age_years: u32,
    pub gender: String,
    pub avg_rating: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewSession {
    profile_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewMessage {
    text: String,
}

/// Body of `POST /ratings`. A missing `rater_id` counts as one anonymous rater.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingSubmission {
    pub session_id: String,
    #[serde(default)]
    pub rater_id: Option<String>,
    pub sensibleness: u8,
    pub specificity: u8,
    pub favorite: bool,
    pub realistic: bool,
}

/// Shared service state. The engine is immutable; sessions and ratings are
/// internally synchronized.
pub struct AppState {
    pub engine: Arc<DialogueEngine>,
    pub sessions: SessionManager,
    /// One rating per (rater, session); resubmission replaces it.
    ratings: Mutex<BTreeMap<(String, String), Rating>>,
    pub system_label: String,
}

impl AppState {
    pub fn new(engine: DialogueEngine, sessions: SessionManager, system_label: impl Into<String>) -> Self {
        Self {
            engine: Arc::new(engine),
            sessions,
            ratings: Mutex::new(BTreeMap::new()),
            system_label: system_label.into(),
        }
    }

    pub fn ratings(&self) -> Vec<Rating> {
        self.ratings.lock().unwrap().values().cloned().collect()
    }

    pub fn report(&self) -> SsaReport {
        let ratings = self.ratings();
        let group = ratings
            .iter()
            .map(|r| (r.conversation_id.clone(), self.system_label.clone()))
            .collect();
        ssa_report(&ratings, &group).unwrap_or(SsaReport { rows: Vec::new() })
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    if body.is_empty() {
        return Err(ApiError::bad_request("request body is empty"));
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

async fn health(State(s): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok", "profiles": s.engine.store.len()}))
}

async fn profiles(State(s): State<Arc<AppState>>) -> Json<Vec<ProfileSummary>> {
    Json(
        s.engine
            .store
            .profiles()
            .map(|p| ProfileSummary {
                id: p.id.clone(),
                age_years: p.age_years,
                gender: p.gender.clone(),
                avg_rating: avg_rating(p).ok(),
            })
            .collect(),
    )
}

async fn create_session(
    State(s): State<Arc<AppState>>,
    body: Bytes,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let req: NewSession = parse(&body)?;
    let session_id = s.sessions.start(&s.engine.store, &req.profile_id)?;
    Ok((StatusCode::CREATED, Json(SessionCreated { session_id })))
}

async fn post_message(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Turn>, ApiError> {
    let req: NewMessage = parse(&body)?;
    if !s.sessions.contains(&id) {
        return Err(ApiError::not_found(format!("unknown session {id:?}")));
    }
    let state = s.clone();
    let turn = tokio::task::spawn_blocking(move || state.sessions.handle_query(&id, &req.text, &state.engine))
        .await
        .map_err(|e| ApiError::internal(format!("query task failed: {e}")))??;
    Ok(Json(turn))
}

async fn get_history(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<Vec<Turn>>, ApiError> {
    Ok(Json(s.sessions.history(&id)?))
}

async fn post_rating(State(s): State<Arc<AppState>>, body: Bytes) -> Result<StatusCode, ApiError> {
    let req: RatingSubmission = parse(&body)?;
    let rater = req.rater_id.filter(|r| !r.trim().is_empty()).unwrap_or_else(|| "anonymous".into());
    let rating = Rating {
        rater_id: rater.clone(),
        conversation_id: req.session_id.clone(),
        sensibleness: req.sensibleness,
        specificity: req.specificity,
        favorite: req.favorite,
        realistic: req.realistic,
    };
    rating.validate().map_err(ApiError::bad_request)?;
    if !s.sessions.contains(&req.session_id) {
        return Err(ApiError::not_found(format!("unknown session {:?}", req.session_id)));
    }
    s.ratings.lock().unwrap().insert((rater, req.session_id), rating);
    Ok(StatusCode::NO_CONTENT)
}

async fn report(State(s): State<Arc<AppState>>) -> Json<SsaReport> {
    Json(s.report())
}

async fn no_route() -> ApiError {
    ApiError::not_found("no such endpoint")
}

/// Rewrites error responses produced outside the handlers (unsupported
/// method, oversized body) into [`ApiError`] bodies.
async fn ensure_json_errors(resp: Response) -> Response {
    let status = resp.status();
    let is_json = resp
        .headers()
        .get(header::CONTENT_TYPE)
        .is_some_and(|v| v == HeaderValue::from_static("application/json"));
    if !(status.is_client_error() || status.is_server_error()) || is_json {
        return resp;
    }
    let err = match status {
        StatusCode::NOT_FOUND | StatusCode::METHOD_NOT_ALLOWED => {
            ApiError::not_found(format!("no such endpoint ({status})"))
        }
        s if s.is_client_error() => ApiError::bad_request(format!("rejected request ({status})")),
        _ => ApiError::internal(format!("server error ({status})")),
    };
    err.into_response()
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/profiles", get(profiles))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/history", get(get_history))
        .route("/ratings", post(post_rating))
        .route("/ratings/report", get(report))
        .fallback(no_route)
        .layer(axum::middleware::map_response(ensure_json_errors))
        .with_state(state)
}

#[derive(Debug)]
pub enum ServerError {
    Config(ConfigError),
    Sessions(DialogueError),
    Bind { addr: String, source: std::io::Error },
    Serve(std::io::Error),
}

impl std::fmt::Display for ServerError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ServerError::Config(e) => write!(f, "startup: {e}"),
            ServerError::Sessions(e) => write!(f, "restoring sessions: {e}"),
            ServerError::Bind { addr, source } => write!(f, "bind {addr}: {source}"),
            ServerError::Serve(e) => write!(f, "server: {e}"),
        }
    }
}

impl std::error::Error for ServerError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            ServerError::Config(e) => Some(e),
            ServerError::Sessions(e) => Some(e),
            ServerError::Bind { source, .. } => Some(source),
            ServerError::Serve(e) => Some(e),
        }
    }
}

/// Loads everything the config references. Fails before binding if any file
/// is missing or invalid.
pub fn build_state(config: &AppConfig) -> Result<AppState, ServerError> {
    let engine = config.build_engine().map_err(ServerError::Config)?;
    let sessions = match &config.data_dir {
        Some(dir) => SessionManager::recover(dir).map_err(ServerError::Sessions)?,
        None => SessionManager::new(),
    };
    Ok(AppState::new(engine, sessions, config.system_label.clone()))
}

/// Serves on `listener` until `shutdown` resolves, then lets in-flight
/// requests finish.
pub async fn serve_with_shutdown<F>(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: F,
) -> Result<(), ServerError>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(ServerError::Serve)
}

/// Binds `config.bind` and serves until Ctrl-C.
pub async fn serve(config: &AppConfig) -> Result<(), ServerError> {
    let state = Arc::new(build_state(config)?);
    let listener = tokio::net::TcpListener::bind(&config.bind)
        .await
        .map_err(|source| ServerError::Bind {
            addr: config.bind.clone(),
            source,
        })?;
    let addr: Option<SocketAddr> = listener.local_addr().ok();
    log::info!(
        "serving {} profiles on {}",
        state.engine.store.len(),
        addr.map_or(config.bind.clone(), |a| a.to_string())
    );
    serve_with_shutdown(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
        log::info!("shutting down");
    })
    .await
}

//! HTTP API over a loaded bundle.
//!
//! * `POST /v1/chat` answers one utterance and logs it to the session.
//! * `GET /v1/sessions/{id}` returns a session's history.
//! * `GET /v1/health` reports corpus size and model dimensions.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use coachbot_core::ranker::SelectionPolicy;
use coachbot_core::service::{AnswerOptions, EngineBundle, ServiceError, SessionStore, Trace};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::CorsLayer;

/// Selection settings applied when a request does not choose its own.
#[derive(Debug, Clone, Copy, Default)]
pub struct Defaults {
    pub policy: Option<SelectionPolicy>,
    pub temperature: Option<f64>,
}

#[derive(Clone)]
pub struct AppState {
    bundle: Arc<EngineBundle>,
    sessions: Arc<SessionStore>,
    defaults: Defaults,
}

impl AppState {
    pub fn new(bundle: EngineBundle, defaults: Defaults) -> Self {
        AppState {
            bundle: Arc::new(bundle),
            sessions: Arc::new(SessionStore::new()),
            defaults,
        }
    }

    pub fn sessions(&self) -> &SessionStore {
        &self.sessions
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ChatRequest {
    pub session_id: String,
    pub utterance: String,
    #[serde(default)]
    pub policy: Option<SelectionPolicy>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChatReply {
    pub response_text: String,
    pub session_id: String,
    pub trace: Trace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ModelDims {
    pub title: usize,
    pub reply: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub corpus_posts: usize,
    pub corpus_replies: usize,
    pub model_dims: ModelDims,
}

/// Error body `{"error": code, "message": detail}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({ "error": self.code, "message": self.message })),
        )
            .into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::InvalidQuery => ApiError::new(StatusCode::BAD_REQUEST, "invalid_query", e.to_string()),
            ServiceError::InvalidConfig(_) => ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.to_string()),
            other => {
                log::error!("chat failed: {other}");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string())
            }
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/chat", post(chat))
        .route("/v1/sessions/{id}", get(session))
        .route("/v1/health", get(health))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

async fn chat(
    State(state): State<AppState>,
    body: Result<Json<ChatRequest>, JsonRejection>,
) -> Result<Json<ChatReply>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.body_text()))?;
    if req.session_id.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid_request",
            "session_id must not be empty",
        ));
    }
    let options = AnswerOptions {
        policy: req.policy.or(state.defaults.policy),
        temperature: req.temperature.or(state.defaults.temperature),
        seed: req.seed,
    };
    let bundle = state.bundle.clone();
    let utterance = req.utterance.clone();
    // inference is CPU-bound; keep it off the async workers
    let answer = tokio::task::spawn_blocking(move || bundle.answer(&utterance, &options))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    state
        .sessions
        .record(&req.session_id, &req.utterance, &answer.response_text);
    Ok(Json(ChatReply {
        response_text: answer.response_text,
        session_id: req.session_id,
        trace: answer.trace,
    }))
}

async fn session(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match state.sessions.get(&id) {
        Some(s) => Json(s).into_response(),
        None => ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown session `{id}`")).into_response(),
    }
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    let kb = state.bundle.knowledge_base();
    Json(Health {
        status: "ok",
        corpus_posts: kb.corpus().len(),
        corpus_replies: kb.corpus().reply_count(),
        model_dims: ModelDims {
            title: kb.title_model().dim(),
            reply: kb.reply_model().dim(),
        },
    })
}

//! JSON-over-HTTP facade for a [`MemoryEngine`].
//!
//! | route | body | reply |
//! |---|---|---|
//! | `POST /v1/episodes` | [`EpisodeIngestRequest`] | [`EpisodeIngestResponse`] |
//! | `POST /v1/retrieve` | [`RetrieveRequest`] | [`RetrieveResponse`] |
//! | `GET /v1/orbs/{id}` | | orb JSON, 400 on a malformed id, 404 if unknown |
//! | `GET /v1/health` | | `{"status":"ok"}` |
//! | `GET /v1/stats` | | engine counts and settings |
//!
//! Engine calls may block on a remote model, so each runs on the blocking
//! pool.

pub mod api;
pub mod config;

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use memorb_core::{Error, ErrorKind, MemoryEngine, Orb, Stats};
use serde_json::json;
use tokio::net::TcpListener;
use tracing::{error, info};

pub use api::{EpisodeIngestRequest, EpisodeIngestResponse, ErrorBody, HitView, RetrieveRequest, RetrieveResponse};
pub use config::ServiceConfig;

#[derive(Debug)]
pub enum ApiError {
    Engine(Error),
    BadBody(String),
    NotFound(String),
    Internal(String),
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::Engine(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::BadBody(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind, message) = match self {
            ApiError::Engine(e) => {
                let (status, kind) = match e.kind() {
                    ErrorKind::Input => (StatusCode::BAD_REQUEST, "input"),
                    ErrorKind::Adapter => (StatusCode::BAD_GATEWAY, "adapter"),
                    ErrorKind::Storage => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
                };
                (status, kind, e.to_string())
            }
            ApiError::BadBody(m) => (StatusCode::BAD_REQUEST, "input", m),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, "not_found", m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, "internal", m),
        };
        if status.is_server_error() {
            error!(%status, %message, "request failed");
        }
        let body = ErrorBody {
            error: message,
            kind: kind.to_owned(),
        };
        (status, Json(body)).into_response()
    }
}

type Shared = Arc<MemoryEngine>;

async fn blocking<T, F>(engine: &Shared, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&MemoryEngine) -> memorb_core::Result<T> + Send + 'static,
{
    let engine = engine.clone();
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError::Internal(format!("worker panicked: {e}")))?
        .map_err(ApiError::from)
}

async fn ingest(
    State(engine): State<Shared>,
    body: Result<Json<EpisodeIngestRequest>, JsonRejection>,
) -> Result<Json<EpisodeIngestResponse>, ApiError> {
    let Json(req) = body?;
    let outcome = blocking(&engine, move |e| {
        e.ingest(&req.trajectory, req.memory_context.as_deref().unwrap_or(""), req.now)
    })
    .await?;
    Ok(Json(EpisodeIngestResponse {
        orb_id: outcome.orb.id().clone(),
        created: outcome.created,
        validation: outcome.validation,
    }))
}

async fn retrieve(
    State(engine): State<Shared>,
    body: Result<Json<RetrieveRequest>, JsonRejection>,
) -> Result<Json<RetrieveResponse>, ApiError> {
    let Json(req) = body?;
    let memory = blocking(&engine, move |e| e.retrieve(&req.into())).await?;
    Ok(Json(memory.into()))
}

async fn fetch_orb(State(engine): State<Shared>, Path(id): Path<String>) -> Result<Json<Orb>, ApiError> {
    let lookup = id.clone();
    match blocking(&engine, move |e| e.fetch_by_str(&lookup)).await? {
        Some(orb) => Ok(Json(orb)),
        None => Err(ApiError::NotFound(format!("no orb with id {id}"))),
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn stats(State(engine): State<Shared>) -> Json<Stats> {
    Json(engine.stats())
}

pub fn router(engine: Shared) -> Router {
    Router::new()
        .route("/v1/episodes", post(ingest))
        .route("/v1/retrieve", post(retrieve))
        .route("/v1/orbs/{id}", get(fetch_orb))
        .route("/v1/health", get(health))
        .route("/v1/stats", get(stats))
        .with_state(engine)
}

/// Serves until ctrl-c.
pub async fn serve(listener: TcpListener, engine: Shared) -> std::io::Result<()> {
    info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

//! JSON HTTP routes over [`Service`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::record::Verdict;
use crate::service::{Service, ServiceError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChoiceRequest {
    #[serde(default)]
    pub selected: Vec<String>,
    #[serde(default)]
    pub nonce: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub id: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictRequest {
    pub verdicts: Vec<VerdictEntry>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let body = json!({ "error": self.code(), "message": self.to_string() });
        (status, Json(body)).into_response()
    }
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::InvalidRequest(e.to_string()))
}

/// Service calls do blocking file I/O, so they run off the async workers.
async fn blocking<T, F>(service: Arc<Service>, f: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&service))
        .await
        .map_err(|e| ServiceError::Engine(format!("worker failed: {e}")))?
}

async fn create(State(service): State<Arc<Service>>, body: Bytes) -> Result<Response, ServiceError> {
    let profile: Value = parse(&body)?;
    let created = blocking(service, move |s| s.create_session(&profile)).await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn choices(
    State(service): State<Arc<Service>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ServiceError> {
    let req: ChoiceRequest = parse(&body)?;
    let out = blocking(service, move |s| s.submit(&id, &req.selected, req.nonce.as_deref())).await?;
    Ok(Json(out).into_response())
}

async fn session(State(service): State<Arc<Service>>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let record = blocking(service, move |s| s.get(&id)).await?;
    Ok(Json(record).into_response())
}

async fn evaluation(
    State(service): State<Arc<Service>>,
    Path(id): Path<String>,
) -> Result<Response, ServiceError> {
    let view = blocking(service, move |s| s.evaluation(&id)).await?;
    Ok(Json(view).into_response())
}

async fn judge(
    State(service): State<Arc<Service>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ServiceError> {
    let req: VerdictRequest = parse(&body)?;
    let verdicts: Vec<(String, Verdict)> = req.verdicts.into_iter().map(|v| (v.id, v.verdict)).collect();
    let view = blocking(service, move |s| s.judge(&id, &verdicts)).await?;
    Ok(Json(view).into_response())
}

async fn health(State(service): State<Arc<Service>>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "diets": service.engines().summaries(),
        "sessions": service.session_ids().len(),
        "config_hash": service.config_hash(),
    }))
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/healthz", get(health))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(session))
        .route("/sessions/{id}/choices", post(choices))
        .route("/sessions/{id}/evaluation", get(evaluation).post(judge))
        .with_state(service)
}

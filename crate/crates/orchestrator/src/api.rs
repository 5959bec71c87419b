//! HTTP+JSON front end.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;

use crate::error::OrchestratorError;
use crate::service::Orchestrator;
use crate::types::{DeployRequest, SubmitRequest};

type AppState = Arc<Orchestrator>;
type ApiResult<T> = Result<Json<T>, OrchestratorError>;

impl IntoResponse for OrchestratorError {
    fn into_response(self) -> Response {
        let status = match self.code() {
            "not_found" => StatusCode::NOT_FOUND,
            "conflict" => StatusCode::CONFLICT,
            "guardrail_rejected" | "integrity" => StatusCode::UNPROCESSABLE_ENTITY,
            "approval_required" => StatusCode::FORBIDDEN,
            "bad_request" => StatusCode::BAD_REQUEST,
            "unauthorized" => StatusCode::UNAUTHORIZED,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "error": self.code(), "message": self.to_string() });
        if let OrchestratorError::Guardrail(r) = &self {
            body["missing_slides"] = json!(r.missing_slides);
            body["classes_below_minimum"] = json!(r.classes_below_minimum);
        }
        (status, Json(body)).into_response()
    }
}

fn authorize(state: &Orchestrator, headers: &HeaderMap) -> Result<(), OrchestratorError> {
    let Some(token) = &state.config().auth_token else { return Ok(()) };
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if given == Some(token.as_str()) {
        Ok(())
    } else {
        Err(OrchestratorError::Unauthorized)
    }
}

/// Run blocking service work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, OrchestratorError> + Send + 'static,
) -> Result<T, OrchestratorError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| OrchestratorError::BadRequest(format!("request aborted: {e}")))?
}

async fn create_session(State(s): State<AppState>, headers: HeaderMap) -> ApiResult<serde_json::Value> {
    authorize(&s, &headers)?;
    let rec = blocking(move || s.create_session()).await?;
    Ok(Json(json!({ "session_id": rec.session_id })))
}

async fn submit(State(s): State<AppState>, headers: HeaderMap, Json(req): Json<SubmitRequest>) -> impl IntoResponse {
    authorize(&s, &headers)?;
    blocking(move || s.submit_job(req)).await.map(|r| (StatusCode::CREATED, Json(r)))
}

#[derive(Deserialize)]
struct JobsQuery {
    session_id: Option<String>,
}

async fn list_jobs(State(s): State<AppState>, Query(q): Query<JobsQuery>) -> impl IntoResponse {
    blocking(move || s.list_jobs(q.session_id.as_deref())).await.map(Json)
}

async fn get_job(State(s): State<AppState>, Path(id): Path<String>) -> impl IntoResponse {
    blocking(move || s.get_job(&id)).await.map(Json)
}

#[derive(Deserialize)]
struct MetricsQuery {
    since_epoch: Option<usize>,
}

async fn metrics(State(s): State<AppState>, Path(id): Path<String>, Query(q): Query<MetricsQuery>) -> impl IntoResponse {
    blocking(move || s.metrics(&id, q.since_epoch)).await.map(Json)
}

async fn stop(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> impl IntoResponse {
    authorize(&s, &headers)?;
    blocking(move || s.stop_job(&id)).await.map(Json)
}

async fn comparison(State(s): State<AppState>, Path(id): Path<String>) -> impl IntoResponse {
    blocking(move || s.comparison(&id)).await.map(Json)
}

async fn deploy(State(s): State<AppState>, headers: HeaderMap, Json(req): Json<DeployRequest>) -> impl IntoResponse {
    authorize(&s, &headers)?;
    blocking(move || s.deploy(req)).await.map(|r| (StatusCode::CREATED, Json(r)))
}

async fn get_deployment(State(s): State<AppState>, Path(id): Path<String>) -> impl IntoResponse {
    blocking(move || s.get_deployment(&id)).await.map(Json)
}

async fn outcomes(State(s): State<AppState>) -> impl IntoResponse {
    blocking(move || s.tuning_outcomes()).await.map(Json)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/jobs", post(submit).get(list_jobs))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/metrics", get(metrics))
        .route("/jobs/{id}/stop", post(stop))
        .route("/jobs/{id}/comparison", get(comparison))
        .route("/deployments", post(deploy))
        .route("/deployments/{id}", get(get_deployment))
        .route("/tuning-outcomes", get(outcomes))
        .with_state(state)
}

/// Background poller: one cycle per interval, never two at once.
pub fn spawn_poller(state: AppState) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(state.config().poll_interval);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tick.tick().await;
            let s = state.clone();
            match tokio::task::spawn_blocking(move || s.poll_logs()).await {
                Ok(Ok(n)) if n > 0 => tracing::debug!("poll cycle ingested {n} events"),
                Ok(Ok(_)) => {}
                Ok(Err(e)) => tracing::warn!("poll cycle failed: {e}"),
                Err(e) => tracing::warn!("poll task panicked: {e}"),
            }
        }
    })
}

/// Serve the API and poller on `listener` until `shutdown` resolves, then
/// terminate any running trainers.
pub async fn serve(
    state: AppState,
    listener: TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let poller = spawn_poller(state.clone());
    let result = axum::serve(listener, router(state.clone())).with_graceful_shutdown(shutdown).await;
    poller.abort();
    tokio::task::spawn_blocking(move || state.shutdown()).await.ok();
    result
}

pub async fn bind(addr: SocketAddr) -> std::io::Result<TcpListener> {
    TcpListener::bind(addr).await
}

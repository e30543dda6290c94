//! HTTP API.
//!
//! Reads are open. `POST` endpoints need `Authorization: Bearer <token>`
//! with a token from `harmlens annotator add`. Errors come back as
//! `{"code": ..., "message": ..., "field": ...}`.

use std::future::Future;
use std::sync::{Arc, PoisonError, RwLock, RwLockReadGuard, RwLockWriteGuard};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use harmlens::annotation::{SelectionInput, Submission};
use harmlens::incidents::IncidentQuery;
use harmlens::report::{to_json_bytes, ExportFormat};
use harmlens::{Platform, PlatformError};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::auth::{self, AuthError};
use crate::reports::{self, AgreementParams};

#[derive(Clone)]
pub struct AppState {
    platform: Arc<RwLock<Platform>>,
    secret: Arc<[u8]>,
}

impl AppState {
    pub fn new(platform: Platform, secret: &[u8]) -> Self {
        Self { platform: Arc::new(RwLock::new(platform)), secret: secret.into() }
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Platform> {
        self.platform.read().unwrap_or_else(PoisonError::into_inner)
    }

    fn write(&self) -> RwLockWriteGuard<'_, Platform> {
        self.platform.write().unwrap_or_else(PoisonError::into_inner)
    }

    /// Resolves the bearer token to an annotator id.
    fn authenticate(&self, headers: &HeaderMap) -> Result<String, ApiError> {
        let token = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .ok_or(AuthError::Missing)?;
        let annotator_id = auth::verify(&self.secret, token, Utc::now())?;
        let platform = self.read();
        match platform.annotator(&annotator_id).and_then(|a| a.token_hash.as_deref()) {
            Some(hash) if hash == auth::token_hash(token) => Ok(annotator_id),
            _ => Err(AuthError::Revoked.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, code: code.into(), message: message.into(), field: None }
    }

    fn with_field(mut self, field: &str) -> Self {
        self.field = Some(field.into());
        self
    }
}

/// HTTP status for a platform error code.
pub fn status_for(code: &str) -> StatusCode {
    match code {
        "UNKNOWN_INCIDENT" | "UNKNOWN_ROUND" | "UNKNOWN_TAXONOMY_VERSION" | "UNKNOWN_ANNOTATOR" => StatusCode::NOT_FOUND,
        "DUPLICATE_ROUND" | "DUPLICATE_ANNOTATOR" | "VERSION_CONFLICT" | "ROUND_CLOSED" | "ROUND_ALREADY_CLOSED"
        | "ROUND_OPEN" => StatusCode::CONFLICT,
        "STORE_LOCKED" | "READ_ONLY" => StatusCode::SERVICE_UNAVAILABLE,
        "STORAGE_ERROR" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

fn field_for(code: &str) -> Option<&'static str> {
    Some(match code {
        "UNKNOWN_SELECTION" | "MALFORMED_STATUS" | "CONFLICTING_STATUS" => "selections",
        "EMPTY_ROUND" => "incident_ids",
        "INVALID_LABEL" | "DUPLICATE_ROUND" => "label",
        "INCIDENT_NOT_IN_ROUND" => "incident_id",
        "UNKNOWN_TAXONOMY_VERSION" => "taxonomy_version",
        "TOO_FEW_RESAMPLES" => "resamples",
        "INVALID_CONFIDENCE" => "confidence",
        "INVALID_QUERY" => "limit",
        _ => return None,
    })
}

impl From<PlatformError> for ApiError {
    fn from(e: PlatformError) -> Self {
        let code = e.code();
        if matches!(e, PlatformError::Journal(_)) {
            tracing::error!(error = %e, "storage failure");
        }
        Self { status: status_for(code), code: code.into(), message: e.to_string(), field: field_for(code).map(String::from) }
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, e.code(), e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "MALFORMED_REQUEST", e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "INVALID_PARAMETER", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        json_bytes(self.status, to_json_bytes(&self))
    }
}

fn json_bytes(status: StatusCode, body: Vec<u8>) -> Response {
    (status, [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))], body).into_response()
}

fn json<T: Serialize + ?Sized>(status: StatusCode, value: &T) -> Response {
    json_bytes(status, to_json_bytes(value))
}

type ApiResult = Result<Response, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/taxonomy", get(get_taxonomy))
        .route("/api/taxonomy/diff", get(get_diff))
        .route("/api/incidents", get(list_incidents))
        .route("/api/incidents/{id}", get(get_incident))
        .route("/api/rounds", get(list_rounds).post(open_round))
        .route("/api/rounds/{id}/close", post(close_round))
        .route("/api/rounds/{id}/annotations", get(round_annotations))
        .route("/api/rounds/{id}/agreement", get(agreement))
        .route("/api/rounds/{id}/summary", get(summary))
        .route("/api/rounds/{id}/sankey", get(sankey))
        .route("/api/annotations", post(submit))
        .route("/api/trend", get(trend))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", "no such endpoint") })
        .with_state(state)
}

/// Serves until `shutdown` resolves, then finishes in-flight requests.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

async fn health() -> Response {
    json(StatusCode::OK, &serde_json::json!({ "status": "ok" }))
}

#[derive(Debug, Deserialize)]
struct VersionQuery {
    version: Option<String>,
}

async fn get_taxonomy(State(s): State<AppState>, q: Result<Query<VersionQuery>, QueryRejection>) -> ApiResult {
    let Query(q) = q?;
    let p = s.read();
    let t = match &q.version {
        Some(v) => p.taxonomy(v)?,
        None => p.current_taxonomy(),
    };
    Ok(json(StatusCode::OK, t))
}

#[derive(Debug, Deserialize)]
struct DiffQuery {
    old: String,
    new: String,
}

async fn get_diff(State(s): State<AppState>, q: Result<Query<DiffQuery>, QueryRejection>) -> ApiResult {
    let Query(q) = q?;
    Ok(json(StatusCode::OK, &s.read().diff(&q.old, &q.new)?))
}

async fn list_incidents(State(s): State<AppState>, q: Result<Query<IncidentQuery>, QueryRejection>) -> ApiResult {
    let Query(q) = q?;
    Ok(json(StatusCode::OK, &s.read().query_incidents(&q)?))
}

async fn get_incident(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult {
    Ok(json(StatusCode::OK, s.read().incident(&id)?))
}

async fn list_rounds(State(s): State<AppState>) -> Response {
    json(StatusCode::OK, &s.read().rounds())
}

#[derive(Debug, Deserialize)]
struct OpenRound {
    label: String,
    /// Defaults to the current taxonomy version.
    taxonomy_version: Option<String>,
    incident_ids: Vec<String>,
}

async fn open_round(State(s): State<AppState>, headers: HeaderMap, body: Result<Json<OpenRound>, JsonRejection>) -> ApiResult {
    s.authenticate(&headers)?;
    let Json(body) = body?;
    let mut p = s.write();
    let version = body.taxonomy_version.unwrap_or_else(|| p.current_taxonomy().version.clone());
    let round = p.open_round(&body.label, &version, &body.incident_ids)?;
    Ok(json(StatusCode::CREATED, &round))
}

async fn close_round(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    s.authenticate(&headers)?;
    Ok(json(StatusCode::OK, &s.write().close_round(&id)?))
}

#[derive(Debug, Deserialize)]
struct SubmitBody {
    incident_id: String,
    round_id: String,
    /// Defaults to the token's annotator; any other value is refused.
    annotator_id: Option<String>,
    #[serde(default)]
    selections: Vec<SelectionInput>,
    comment: Option<String>,
}

async fn submit(State(s): State<AppState>, headers: HeaderMap, body: Result<Json<SubmitBody>, JsonRejection>) -> ApiResult {
    let caller = s.authenticate(&headers)?;
    let Json(body) = body?;
    if body.annotator_id.as_ref().is_some_and(|a| *a != caller) {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "FORBIDDEN", "annotations can only be submitted as yourself")
            .with_field("annotator_id"));
    }
    let submission = Submission {
        incident_id: body.incident_id,
        annotator_id: caller,
        round_id: body.round_id,
        selections: body.selections,
        comment: body.comment,
    };
    let mut p = s.write();
    let existed = p
        .annotations_for(&submission.incident_id, &submission.round_id)
        .map(|anns| anns.iter().any(|a| a.annotator_id == submission.annotator_id))
        .unwrap_or(false);
    let stored = p.submit(&submission)?;
    Ok(json(if existed { StatusCode::OK } else { StatusCode::CREATED }, &stored))
}

#[derive(Debug, Deserialize)]
struct IncidentFilter {
    incident: Option<String>,
}

/// While a round is open an annotator sees only their own annotations, and
/// only with a valid token; everything is visible once it closes.
async fn round_annotations(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    q: Result<Query<IncidentFilter>, QueryRejection>,
) -> ApiResult {
    let Query(q) = q?;
    let open = s.read().round(&id)?.is_open();
    let viewer = if open { Some(s.authenticate(&headers)?) } else { None };
    let p = s.read();
    let anns = match &q.incident {
        Some(incident) => p.annotations_for(incident, &id)?,
        None => p.round_annotations(&id)?,
    };
    let visible: Vec<_> = anns.into_iter().filter(|a| viewer.as_ref().is_none_or(|v| *v == a.annotator_id)).collect();
    Ok(json(StatusCode::OK, &visible))
}

async fn agreement(
    State(s): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<AgreementParams>, QueryRejection>,
) -> ApiResult {
    let Query(q) = q?;
    Ok(json_bytes(StatusCode::OK, reports::agreement(&s.read(), &id, &q)?))
}

#[derive(Debug, Deserialize)]
struct FormatQuery {
    #[serde(default = "json_format")]
    format: ExportFormat,
}

fn json_format() -> ExportFormat {
    ExportFormat::Json
}

async fn summary(State(s): State<AppState>, Path(id): Path<String>, q: Result<Query<FormatQuery>, QueryRejection>) -> ApiResult {
    let Query(q) = q?;
    let body = reports::summary(&s.read(), &id, q.format)?;
    Ok(match q.format {
        ExportFormat::Json => json_bytes(StatusCode::OK, body),
        ExportFormat::Csv => ([(header::CONTENT_TYPE, HeaderValue::from_static("text/csv"))], body).into_response(),
    })
}

#[derive(Debug, Deserialize)]
struct SankeyQuery {
    incident: String,
}

async fn sankey(State(s): State<AppState>, Path(id): Path<String>, q: Result<Query<SankeyQuery>, QueryRejection>) -> ApiResult {
    let Query(q) = q?;
    Ok(json_bytes(StatusCode::OK, reports::sankey(&s.read(), &id, &q.incident)?))
}

#[derive(Debug, Deserialize)]
struct TrendQuery {
    /// Comma-separated round ids; all closed rounds when absent.
    rounds: Option<String>,
}

async fn trend(State(s): State<AppState>, q: Result<Query<TrendQuery>, QueryRejection>) -> ApiResult {
    let Query(q) = q?;
    let ids = q.rounds.as_deref().map(reports::split_list).unwrap_or_default();
    Ok(json_bytes(StatusCode::OK, reports::trend(&s.read(), &ids)?))
}

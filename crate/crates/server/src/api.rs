//! REST routes.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::{ServeDir, ServeFile};

use bads_core::acquisition::{CandidateGrid, Strategy};
use bads_core::models::{BankConfig, ModelBank};
use bads_core::sim::{canonical_audiogram, generate_reference_exam, read_exam_csv, ExamConfig, HearingLossClass};
use bads_core::stimulus::Observation;

use crate::session::{validate_reference, LogRecord, ReferenceSource, Session, SessionError, SessionSettings};
use crate::store::{new_id, now, SessionHandle, Store};

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, body: ErrorBody { code: code.into(), message: message.into() } }
    }

    fn validation(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation_error", message)
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::NotFound(m) => ApiError::new(StatusCode::NOT_FOUND, "not_found", m),
            SessionError::Conflict { code, message } => ApiError::new(StatusCode::CONFLICT, code, message),
            SessionError::Validation(m) => ApiError::validation(m),
            SessionError::Internal(m) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", m),
        }
    }
}

impl From<tokio::task::JoinError> for ApiError {
    fn from(e: tokio::task::JoinError) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", format!("worker failed: {e}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Candidate grid as counts and ranges.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_freq: usize,
    pub f_lo: f64,
    pub f_hi: f64,
    pub n_int: usize,
    pub i_lo: f64,
    pub i_hi: f64,
}

/// Body of `POST /v1/sessions`: exactly one of `class`, `observations` or
/// `exam_csv`, plus optional overrides.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub class: Option<String>,
    pub exam_seed: Option<u64>,
    pub observations: Option<Vec<Observation>>,
    pub exam_csv: Option<String>,
    pub strategy: Option<Strategy>,
    pub bf_threshold: Option<f64>,
    pub grid: Option<GridSpec>,
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseRequest {
    pub ordinal: usize,
    pub heard: bool,
}

fn parse<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::validation(format!("malformed request body: {e}")))
}

enum Reference {
    Class(HearingLossClass, u64),
    Observations(Vec<Observation>),
}

impl CreateRequest {
    fn resolve(self) -> ApiResult<(SessionSettings, Reference)> {
        let mut settings = SessionSettings::default();
        if let Some(s) = self.strategy {
            settings.strategy = s;
        }
        if let Some(bf) = self.bf_threshold {
            settings.bf_threshold = bf;
        }
        if let Some(g) = self.grid {
            settings.grid = CandidateGrid::new(g.n_freq, g.f_lo, g.f_hi, g.n_int, g.i_lo, g.i_hi).map_err(SessionError::from)?;
        }
        if let Some(seed) = self.seed {
            settings.seed = seed;
        }
        settings.validate()?;
        let reference = match (self.class, self.observations, self.exam_csv) {
            (Some(c), None, None) => Reference::Class(c.parse().map_err(SessionError::from)?, self.exam_seed.unwrap_or(0)),
            (None, Some(obs), None) => Reference::Observations(obs),
            (None, None, Some(text)) => Reference::Observations(
                read_exam_csv(text.as_bytes()).map_err(|e| ApiError::validation(format!("malformed exam CSV: {e}")))?,
            ),
            _ => return Err(ApiError::validation("give exactly one of class, observations or exam_csv")),
        };
        if let Reference::Observations(obs) = &reference {
            validate_reference(obs)?;
        }
        Ok((settings, reference))
    }
}

fn build_session(settings: SessionSettings, reference: Reference) -> Result<(Session, LogRecord), SessionError> {
    let (source, observations, theta_f) = match reference {
        Reference::Class(class, exam_seed) => {
            let cfg = ExamConfig { grid: settings.grid.clone(), ..ExamConfig::default() };
            let exam = generate_reference_exam(&canonical_audiogram(class), exam_seed, &cfg)?;
            (ReferenceSource::Simulated { class, exam_seed }, exam.observations, exam.theta)
        }
        Reference::Observations(obs) => {
            let bank = ModelBank::fit_reference(obs.clone(), BankConfig::default())?;
            (ReferenceSource::Uploaded, obs, *bank.theta_f())
        }
    };
    let record = LogRecord::Created { id: new_id(), at: now(), settings, source, reference: observations, theta_f };
    let mut session = Session::from_created(&record)?;
    session.next_tone()?;
    Ok((session, record))
}

async fn lookup(store: &Arc<Store>, id: String) -> ApiResult<SessionHandle> {
    let store = store.clone();
    Ok(tokio::task::spawn_blocking(move || store.get_blocking(&id)).await??)
}

async fn create_session(State(store): State<Arc<Store>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: CreateRequest = parse(&body)?;
    let (settings, reference) = req.resolve()?;
    let view = tokio::task::spawn_blocking(move || -> Result<_, SessionError> {
        let (session, record) = build_session(settings, reference)?;
        let view = session.view();
        store.insert(session, &record)?;
        Ok(view)
    })
    .await??;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let handle = lookup(&store, id.clone()).await?;
    let guard = handle.read_owned().await;
    if guard.deleted {
        return Err(SessionError::NotFound(format!("session {id} not found")).into());
    }
    let view = tokio::task::spawn_blocking(move || guard.view()).await?;
    Ok(Json(view))
}

async fn next_tone(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let handle = lookup(&store, id).await?;
    let mut guard = handle.write_owned().await;
    let tone = tokio::task::spawn_blocking(move || guard.next_tone()).await??;
    Ok(Json(tone))
}

async fn submit_response(State(store): State<Arc<Store>>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: ResponseRequest = parse(&body)?;
    let handle = lookup(&store, id.clone()).await?;
    let mut guard = handle.write_owned().await;
    let snapshot = tokio::task::spawn_blocking(move || -> Result<_, SessionError> {
        let mut next = guard.clone();
        let (snapshot, record) = next.submit(req.ordinal, req.heard, now())?;
        store.append(&id, &record)?;
        *guard = next;
        Ok(snapshot)
    })
    .await??;
    Ok(Json(snapshot))
}

async fn conclude(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let handle = lookup(&store, id.clone()).await?;
    let mut guard = handle.write_owned().await;
    let view = tokio::task::spawn_blocking(move || -> Result<_, SessionError> {
        let mut next = guard.clone();
        let record = next.conclude(now())?;
        store.append(&id, &record)?;
        *guard = next;
        Ok(guard.view())
    })
    .await??;
    Ok(Json(view))
}

async fn delete_session(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    if store.is_cached(&id) {
        let handle = lookup(&store, id.clone()).await?;
        handle.write().await.deleted = true;
    }
    store.remove(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

pub fn router(store: Arc<Store>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session).delete(delete_session))
        .route("/v1/sessions/{id}/next-tone", get(next_tone))
        .route("/v1/sessions/{id}/responses", post(submit_response))
        .route("/v1/sessions/{id}/conclude", post(conclude))
        .route("/v1/{*rest}", axum::routing::any(not_found))
        .with_state(store);
    match static_dir {
        Some(dir) => {
            let index = dir.join("index.html");
            api.fallback_service(ServeDir::new(dir).not_found_service(ServeFile::new(index)))
        }
        None => api.fallback(not_found),
    }
}

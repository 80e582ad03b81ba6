use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use unmix_core::pipeline::{Decision, PipelineConfig, Report, Session, SessionStatus};
use unmix_core::spectra::{parse_spectra_csv, ConcentrationBounds, ReferenceLibrary};

use crate::error::ApiError;
use crate::jobs::JobStatus;
use crate::view::ApiSessionView;
use crate::AppState;

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownBound {
    pub name: String,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    /// Mixture matrix in the CSV layout accepted by the CLI.
    pub mixture_csv: String,
    #[serde(default)]
    pub knowns: Vec<KnownBound>,
    #[serde(default)]
    pub total_bound: Option<f64>,
    /// Knowns covered by `total_bound`; all of them when absent.
    #[serde(default)]
    pub total_group: Option<Vec<String>>,
    #[serde(default)]
    pub config: PipelineConfig,
}

#[derive(Debug, Serialize)]
struct Created {
    id: String,
    status: SessionStatus,
}

#[derive(Debug, Serialize)]
struct LibraryEntry {
    name: String,
    points: usize,
    first: f64,
    last: f64,
}

pub(crate) fn router(state: AppState, body_limit: usize) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/step", post(step_session))
        .route("/sessions/{id}/candidates/{k}/decision", post(decide))
        .route("/sessions/{id}/residual.csv", get(residual_csv))
        .route("/sessions/{id}/report", get(report))
        .route("/jobs/{id}", get(get_job))
        .route("/library", get(library))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

fn parse_json<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn build_session(
    state: &AppState,
    req: CreateSessionRequest,
    id: String,
) -> unmix_core::Result<Session> {
    let data = parse_spectra_csv::<f64, _>(req.mixture_csv.as_bytes())?;
    let library = ReferenceLibrary::from_spectra(data.grid(), &state.inner.library)?;
    let mut bounds = ConcentrationBounds::from_pairs(
        req.knowns.into_iter().map(|k| (k.name, k.bound)),
        req.total_bound,
    )?;
    if let Some(group) = req.total_group {
        bounds = bounds.with_total_group(group)?;
    }
    Session::new(id, data, library, bounds, req.config)
}

async fn create_session(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: CreateSessionRequest = parse_json(&body)?;
    let key = match headers.get(IDEMPOTENCY_HEADER) {
        Some(v) => Some(
            v.to_str()
                .map_err(|_| ApiError::bad_request("idempotency key must be visible ASCII"))?
                .to_owned(),
        ),
        None => None,
    };
    let (id, fresh) = state
        .inner
        .store
        .create(key, |id| build_session(&state, req, id))
        .await?;
    let handle = state
        .inner
        .store
        .get(&id)
        .ok_or_else(|| ApiError::internal("session vanished"))?;
    let status = handle.lock().await.session.status();
    let code = if fresh {
        StatusCode::CREATED
    } else {
        StatusCode::OK
    };
    if fresh {
        tracing::info!(%id, "session created");
    }
    Ok((
        code,
        [(header::LOCATION, format!("/sessions/{id}"))],
        Json(Created { id, status }),
    )
        .into_response())
}

async fn get_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<ApiSessionView>, ApiError> {
    let handle = state
        .inner
        .store
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("session {id}")))?;
    let stored = handle.lock().await;
    Ok(Json(ApiSessionView::of(&stored.session)))
}

async fn step_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let handle = state
        .inner
        .store
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("session {id}")))?;
    let mut guard = handle.lock_owned().await;
    let status = guard.session.status();
    if status.is_terminal() {
        return Ok((StatusCode::OK, Json(ApiSessionView::of(&guard.session))).into_response());
    }
    if status == SessionStatus::AwaitingConfirmation {
        let undecided = guard.session.undecided();
        if !undecided.is_empty() {
            return Err(ApiError::conflict(format!(
                "candidates {undecided:?} have no decision yet"
            )));
        }
    }
    let job = state.inner.jobs.start(&id);
    let job_id = job.id.clone();
    let worker = state.clone();
    // the session stays locked until the step is applied and saved
    tokio::task::spawn_blocking(move || {
        let result = guard
            .session
            .step()
            .and_then(|()| worker.inner.store.persist(&guard))
            .map(|()| ApiSessionView::of(&guard.session))
            .map_err(ApiError::from);
        if let Err(e) = &result {
            tracing::warn!(session = %guard.session.id(), error = %e.message, "step failed");
        }
        worker.inner.jobs.finish(&job_id, result);
    });
    Ok((
        StatusCode::ACCEPTED,
        [(header::LOCATION, format!("/jobs/{}", job.id))],
        Json(job),
    )
        .into_response())
}

async fn get_job(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let job = state
        .inner
        .jobs
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("job {id}")))?;
    let code = if job.status == JobStatus::Running {
        StatusCode::ACCEPTED
    } else {
        StatusCode::OK
    };
    Ok((code, Json(job)).into_response())
}

async fn decide(
    State(state): State<AppState>,
    Path((id, k)): Path<(String, usize)>,
    body: Bytes,
) -> Result<Json<ApiSessionView>, ApiError> {
    let handle = state
        .inner
        .store
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("session {id}")))?;
    let decision: Decision = parse_json(&body)?;
    let mut stored = handle.lock().await;
    let before = stored.session.clone();
    stored.session.decide(k, decision)?;
    if let Err(e) = state.inner.store.persist(&stored) {
        stored.session = before;
        return Err(e.into());
    }
    Ok(Json(ApiSessionView::of(&stored.session)))
}

async fn residual_csv(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let handle = state
        .inner
        .store
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("session {id}")))?;
    let stored = handle.lock().await;
    let session = &stored.session;
    let record = session
        .latest()
        .ok_or_else(|| ApiError::conflict("no iteration has run yet"))?;
    let csv = session
        .residual_of(record)?
        .as_mixture(session.data())?
        .to_csv();
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}

async fn report(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let handle = state
        .inner
        .store
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("session {id}")))?;
    let json = Report::from_session(&handle.lock().await.session).to_json()?;
    Ok(([(header::CONTENT_TYPE, "application/json")], json).into_response())
}

async fn library(State(state): State<AppState>) -> Json<Vec<LibraryEntry>> {
    Json(
        state
            .inner
            .library
            .iter()
            .map(|s| LibraryEntry {
                name: s.label.clone(),
                points: s.grid.len(),
                first: s.grid.first(),
                last: s.grid.last(),
            })
            .collect(),
    )
}

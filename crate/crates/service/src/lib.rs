//! HTTP API over the planning engine.
//!
//! Design calculations answer synchronously. Power simulations run as jobs
//! on one shared worker pool and are polled by id. Jobs live in memory only,
//! so after a restart clients must resubmit on 404.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use survplan_core::config::{parse_document, DesignDoc, DurationRequest, PowerRequest, SchemaError};
use survplan_core::plan::{self, PowerReport};
use survplan_core::{Error, ErrorKind};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "SURVPLAN_THREADS";

/// Worker cap from `SURVPLAN_THREADS`; `None` when unset.
pub fn thread_cap() -> Result<Option<usize>, String> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(format!("{THREADS_ENV} must be a positive integer, got {v:?}")),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

enum Phase {
    Queued,
    Running,
    Done(Box<PowerReport>),
    Failed(String),
}

struct Job {
    total: u64,
    completed: AtomicUsize,
    phase: Mutex<Phase>,
}

/// Snapshot of a job as returned by the API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub state: JobState,
    /// Completed replicates over total, in `[0, 1]`.
    pub progress: f64,
    pub completed: u64,
    pub total: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<PowerReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Job {
    fn record(&self, id: &str) -> JobRecord {
        let phase = self.phase.lock().expect("job lock poisoned");
        let (state, result, error) = match &*phase {
            Phase::Queued => (JobState::Queued, None, None),
            Phase::Running => (JobState::Running, None, None),
            Phase::Done(r) => (JobState::Done, Some((**r).clone()), None),
            Phase::Failed(e) => (JobState::Failed, None, Some(e.clone())),
        };
        let completed = if state == JobState::Done {
            self.total
        } else {
            (self.completed.load(Ordering::Relaxed) as u64).min(self.total)
        };
        JobRecord {
            id: id.to_string(),
            state,
            progress: completed as f64 / self.total as f64,
            completed,
            total: self.total,
            result,
            error,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    jobs: Arc<RwLock<HashMap<String, Arc<Job>>>>,
    pool: Arc<rayon::ThreadPool>,
}

impl AppState {
    /// State with a worker pool of `threads` (all cores when `None`).
    pub fn new(threads: Option<usize>) -> Self {
        let mut builder = rayon::ThreadPoolBuilder::new().thread_name(|i| format!("survplan-worker-{i}"));
        if let Some(n) = threads {
            builder = builder.num_threads(n);
        }
        Self { jobs: Arc::default(), pool: Arc::new(builder.build().expect("worker pool")) }
    }

    fn submit(&self, req: PowerRequest, total: u64) -> String {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let job = Arc::new(Job { total, completed: AtomicUsize::new(0), phase: Mutex::new(Phase::Queued) });
        self.jobs.write().expect("job table poisoned").insert(id.clone(), job.clone());
        self.pool.spawn(move || {
            *job.phase.lock().expect("job lock poisoned") = Phase::Running;
            let outcome = plan::power(&req, Some(&job.completed));
            *job.phase.lock().expect("job lock poisoned") = match outcome {
                Ok(r) => Phase::Done(Box::new(r)),
                Err(e) => Phase::Failed(e.to_string()),
            };
        });
        id
    }

    fn job(&self, id: &str) -> Option<Arc<Job>> {
        self.jobs.read().expect("job table poisoned").get(id).cloned()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/sample-size", post(sample_size))
        .route("/api/v1/duration", post(duration))
        .route("/api/v1/power", post(submit_power))
        .route("/api/v1/jobs/{id}", get(get_job))
        .with_state(state)
}

/// Failure response with a JSON body.
#[derive(Debug)]
pub enum ApiError {
    Schema(SchemaError),
    Core(Error),
    NotFound(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        match self {
            ApiError::Schema(e) => {
                (StatusCode::BAD_REQUEST, Json(json!({"error": "schema", "path": e.path, "message": e.message})))
                    .into_response()
            }
            ApiError::NotFound(id) => (
                StatusCode::NOT_FOUND,
                Json(
                    json!({"error": "not_found", "message": format!("no job {id}; resubmit if the service restarted")}),
                ),
            )
                .into_response(),
            ApiError::Core(e) => {
                let message = e.to_string();
                let body = match (&e, e.kind()) {
                    (
                        Error::InfeasibleBelow { target, lower, upper }
                        | Error::InfeasibleAbove { target, lower, upper },
                        _,
                    ) => {
                        let failed = if matches!(e, Error::InfeasibleBelow { .. }) { "lower" } else { "upper" };
                        json!({
                            "error": "infeasible", "message": message, "failed_bound": failed,
                            "n_target": target, "lower": lower, "upper": upper,
                        })
                    }
                    (_, ErrorKind::Validation) => json!({"error": "validation", "message": message}),
                    _ => json!({"error": "computation", "message": message}),
                };
                (StatusCode::UNPROCESSABLE_ENTITY, Json(body)).into_response()
            }
        }
    }
}

fn parse<T: serde::de::DeserializeOwned>(body: &str) -> Result<T, ApiError> {
    parse_document(body).map_err(ApiError::Schema)
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> survplan_core::Result<T> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.expect("blocking task panicked").map_err(ApiError::Core)
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({"status": "ready", "version": VERSION}))
}

async fn sample_size(body: String) -> Result<Response, ApiError> {
    let doc: DesignDoc = parse(&body)?;
    let r = blocking(move || plan::size(&doc)).await?;
    Ok(Json(r).into_response())
}

async fn duration(body: String) -> Result<Response, ApiError> {
    let req: DurationRequest = parse(&body)?;
    let r = blocking(move || plan::duration(&req)).await?;
    Ok(Json(r).into_response())
}

async fn submit_power(State(state): State<AppState>, body: String) -> Result<Response, ApiError> {
    let req: PowerRequest = parse(&body)?;
    let total = plan::check_power_request(&req).map_err(ApiError::Core)?;
    let id = state.submit(req, total);
    Ok((StatusCode::ACCEPTED, Json(json!({"job_id": id}))).into_response())
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<JobRecord>, ApiError> {
    let job = state.job(&id).ok_or_else(|| ApiError::NotFound(id.clone()))?;
    Ok(Json(job.record(&id)))
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("address {0} is already in use")]
    PortConflict(String),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

/// Binds `addr` and serves until the process exits.
pub async fn serve(addr: &str, state: AppState) -> Result<(), ServeError> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            ServeError::PortConflict(addr.to_string())
        } else {
            ServeError::Bind { addr: addr.to_string(), source: e }
        }
    })?;
    axum::serve(listener, router(state)).await?;
    Ok(())
}

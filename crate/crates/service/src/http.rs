//! JSON over HTTP.
//!
//! | method | path                     | body                          |
//! |--------|--------------------------|-------------------------------|
//! | GET    | `/api/rounds/current`    |                               |
//! | POST   | `/api/tasks/lease`       | `{"reviewer_id"}`             |
//! | POST   | `/api/tasks/{id}/submit` | `{"reviewer_id", "spans"}`    |
//! | GET    | `/api/progress`          |                               |
//!
//! Spans use the dataset shape `{start, end, token_start, token_end,
//! label}`. Errors come back as `{"error", "message"}`.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nerloop_core::annotations::Span;
use nerloop_core::corpus::Token;
use serde::{Deserialize, Serialize};

use crate::queue::{Lease, Progress, ReviewTask, TaskStatus};
use crate::service::{Ack, ReviewService, RoundSummary};
use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaseRequest {
    pub reviewer_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub reviewer_id: String,
    pub spans: Vec<Span>,
}

/// A task as reviewers see it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_id: String,
    pub round: usize,
    pub doc_id: String,
    pub para_index: usize,
    pub text: String,
    pub tokens: Vec<Token>,
    pub spans: Vec<Span>,
    pub status: TaskStatus,
    pub lease: Option<Lease>,
}

impl TaskView {
    pub fn new(task: &ReviewTask, now: u64) -> Self {
        let p = &task.silver.paragraph;
        Self {
            task_id: task.task_id.clone(),
            round: task.round,
            doc_id: p.doc_id.clone(),
            para_index: p.para_index,
            text: p.text.clone(),
            tokens: task.silver.tokens.clone(),
            spans: task.silver.spans.clone(),
            status: task.status(now),
            lease: task.lease.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self {
            ServiceError::UnknownTask(_) => (StatusCode::NOT_FOUND, "unknown_task"),
            ServiceError::StaleLease { .. } => (StatusCode::CONFLICT, "stale_lease"),
            ServiceError::AlreadyDone(_) => (StatusCode::CONFLICT, "already_done"),
            ServiceError::RoundConflict(_) => (StatusCode::CONFLICT, "round_conflict"),
            ServiceError::InvalidSpans { .. } => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid_spans")
            }
            ServiceError::MissingReviewer => (StatusCode::BAD_REQUEST, "missing_reviewer"),
            ServiceError::Io { .. } | ServiceError::Journal(_) => {
                log::error!("{self}");
                (StatusCode::INTERNAL_SERVER_ERROR, "storage")
            }
        };
        let body = ErrorBody {
            error: kind.to_string(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

pub fn router(service: Arc<ReviewService>) -> Router {
    Router::new()
        .route("/api/rounds/current", get(current_round))
        .route("/api/tasks/lease", post(lease))
        .route("/api/tasks/{id}/submit", post(submit))
        .route("/api/progress", get(progress))
        .with_state(service)
}

async fn current_round(State(svc): State<Arc<ReviewService>>) -> Response {
    match svc.current_round() {
        Some(r) => Json::<RoundSummary>(r).into_response(),
        None => (
            StatusCode::NOT_FOUND,
            Json(ErrorBody {
                error: "no_round".into(),
                message: "no round has been started".into(),
            }),
        )
            .into_response(),
    }
}

/// 200 with the task, or 204 when the round has nothing left to lease.
async fn lease(
    State(svc): State<Arc<ReviewService>>,
    Json(req): Json<LeaseRequest>,
) -> Result<Response, ServiceError> {
    Ok(match svc.lease(&req.reviewer_id)? {
        Some(t) => Json(TaskView::new(&t, svc.now())).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn submit(
    State(svc): State<Arc<ReviewService>>,
    Path(id): Path<String>,
    Json(req): Json<SubmitRequest>,
) -> Result<Json<Ack>, ServiceError> {
    svc.submit(&id, &req.reviewer_id, req.spans).map(Json)
}

async fn progress(State(svc): State<Arc<ReviewService>>) -> Json<Progress> {
    Json(svc.progress())
}

/// Serves `router(service)` on `listener` until the future is dropped.
pub async fn serve(
    listener: tokio::net::TcpListener,
    service: Arc<ReviewService>,
) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        log::info!("review service listening on http://{addr}");
    }
    axum::serve(listener, router(service)).await
}

//! Human review for the annotation loop: a leased task queue backed by an
//! append-only journal, its HTTP API, and an [`Annotator`] that waits on it.
//!
//! [`Annotator`]: nerloop_core::workflow::Annotator

use std::path::PathBuf;

pub mod annotator;
pub mod http;
pub mod journal;
pub mod queue;
pub mod service;

pub use annotator::ServiceAnnotator;
pub use queue::{Progress, ReviewTask, TaskStatus};
pub use service::{Ack, Clock, ManualClock, ReviewService, SystemClock, DEFAULT_LEASE_TTL};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("stale lease on {task_id}: {reason}")]
    StaleLease { task_id: String, reason: String },
    #[error("task {0} is already done")]
    AlreadyDone(String),
    #[error("invalid spans for {task_id}: {message}")]
    InvalidSpans { task_id: String, message: String },
    #[error("{0}")]
    RoundConflict(String),
    #[error("reviewer_id must not be empty")]
    MissingReviewer,
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corrupt journal: {0}")]
    Journal(String),
}

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use nerloop_core::annotations::{check_spans, LabeledParagraph, Span};
use serde::{Deserialize, Serialize};

use crate::journal::Journal;
use crate::queue::{Event, Lease, Millis, Progress, Queue, ReviewTask, Submission, TaskStatus};
use crate::ServiceError;

pub const DEFAULT_LEASE_TTL: Duration = Duration::from_secs(15 * 60);

pub trait Clock: Send + Sync {
    fn now(&self) -> Millis;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Millis {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as Millis)
            .unwrap_or(0)
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start: Millis) -> Self {
        Self(AtomicU64::new(start))
    }

    pub fn advance(&self, by: Duration) {
        self.0.fetch_add(by.as_millis() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Millis {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStart {
    Created,
    /// The same round was already queued, e.g. before a restart.
    Existing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub task_id: String,
    pub status: TaskStatus,
    /// True when an identical submission had already been stored.
    pub duplicate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub started_at: Millis,
    pub task_ids: Vec<String>,
    pub progress: Progress,
}

struct Inner {
    queue: Queue,
    journal: Journal,
}

impl Inner {
    /// Logs `event`, then applies it.
    fn commit(&mut self, event: Event) -> Result<(), ServiceError> {
        self.journal.append(&event)?;
        self.queue.apply(&event);
        Ok(())
    }
}

/// The review queue shared by HTTP handlers and the loop.
///
/// All transitions run under one lock and are journaled before they take
/// effect, so an acknowledged submission survives a restart.
pub struct ReviewService {
    inner: Mutex<Inner>,
    clock: Arc<dyn Clock>,
    lease_ttl: Duration,
}

impl ReviewService {
    fn with_parts(queue: Queue, journal: Journal) -> Self {
        Self {
            inner: Mutex::new(Inner { queue, journal }),
            clock: Arc::new(SystemClock),
            lease_ttl: DEFAULT_LEASE_TTL,
        }
    }

    pub fn in_memory() -> Self {
        Self::with_parts(Queue::default(), Journal::memory())
    }

    /// Replays the journal at `path`, creating it if needed.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let (journal, events) = Journal::open(path)?;
        let mut queue = Queue::default();
        for e in &events {
            queue.apply(e);
        }
        log::info!("review queue restored from {} events", events.len());
        Ok(Self::with_parts(queue, journal))
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_lease_ttl(mut self, ttl: Duration) -> Self {
        self.lease_ttl = ttl;
        self
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Queues `silver` for review as `round`. Repeating a call with the same
    /// paragraphs is a no-op.
    pub fn start_round(
        &self,
        round: usize,
        silver: &[LabeledParagraph],
    ) -> Result<RoundStart, ServiceError> {
        let mut inner = self.lock();
        if let Some(r) = inner.queue.round(round) {
            let same = r.task_ids.len() == silver.len()
                && inner.queue.tasks_of(r).zip(silver).all(|(t, s)| &t.silver == s);
            return if same {
                Ok(RoundStart::Existing)
            } else {
                Err(ServiceError::RoundConflict(format!(
                    "round {round} was already queued with different paragraphs"
                )))
            };
        }
        if let Some(current) = inner.queue.current() {
            if current.round > round {
                return Err(ServiceError::RoundConflict(format!(
                    "round {round} is older than the current round {}",
                    current.round
                )));
            }
        }
        let at = self.clock.now();
        inner.commit(Event::RoundStarted {
            round,
            paragraphs: silver.to_vec(),
            at,
        })?;
        log::info!("round {round}: {} tasks queued", silver.len());
        Ok(RoundStart::Created)
    }

    /// Leases the next free task of the current round to `reviewer_id`.
    /// A reviewer who already holds a live lease gets that task back.
    pub fn lease(&self, reviewer_id: &str) -> Result<Option<ReviewTask>, ServiceError> {
        if reviewer_id.trim().is_empty() {
            return Err(ServiceError::MissingReviewer);
        }
        let now = self.clock.now();
        let mut inner = self.lock();
        if let Some(t) = inner.queue.held_by(reviewer_id, now) {
            return Ok(Some(t.clone()));
        }
        let Some(task_id) = inner.queue.next_free(now).map(|t| t.task_id.clone()) else {
            return Ok(None);
        };
        let lease = Lease {
            reviewer_id: reviewer_id.to_string(),
            expires_at: now.saturating_add(self.lease_ttl.as_millis() as u64),
        };
        inner.commit(Event::Leased {
            task_id: task_id.clone(),
            lease,
        })?;
        Ok(inner.queue.task(&task_id).cloned())
    }

    /// Stores a reviewer's corrected spans.
    ///
    /// The submitter must hold the task's latest lease. A lease that has
    /// expired is still honored as long as nobody else took the task.
    pub fn submit(
        &self,
        task_id: &str,
        reviewer_id: &str,
        spans: Vec<Span>,
    ) -> Result<Ack, ServiceError> {
        let now = self.clock.now();
        let mut inner = self.lock();
        let task = inner
            .queue
            .task(task_id)
            .ok_or_else(|| ServiceError::UnknownTask(task_id.to_string()))?;
        if let Some(done) = &task.submission {
            if done.reviewer_id == reviewer_id && done.spans == spans {
                return Ok(Ack {
                    task_id: task_id.to_string(),
                    status: TaskStatus::Done,
                    duplicate: true,
                });
            }
            return Err(ServiceError::AlreadyDone(task_id.to_string()));
        }
        match &task.lease {
            Some(l) if l.reviewer_id == reviewer_id => {}
            Some(_) => {
                return Err(ServiceError::StaleLease {
                    task_id: task_id.to_string(),
                    reason: "the task is leased to another reviewer".into(),
                })
            }
            None => {
                return Err(ServiceError::StaleLease {
                    task_id: task_id.to_string(),
                    reason: "the task was never leased".into(),
                })
            }
        }
        check_spans(&task.silver.tokens, &spans).map_err(|e| ServiceError::InvalidSpans {
            task_id: task_id.to_string(),
            message: e.to_string(),
        })?;
        inner.commit(Event::Submitted(Submission {
            task_id: task_id.to_string(),
            spans,
            reviewer_id: reviewer_id.to_string(),
            submitted_at: now,
        }))?;
        Ok(Ack {
            task_id: task_id.to_string(),
            status: TaskStatus::Done,
            duplicate: false,
        })
    }

    pub fn progress(&self) -> Progress {
        self.lock().queue.progress(self.clock.now())
    }

    pub fn current_round(&self) -> Option<RoundSummary> {
        let now = self.clock.now();
        let inner = self.lock();
        let r = inner.queue.current()?;
        Some(RoundSummary {
            round: r.round,
            started_at: r.started_at,
            task_ids: r.task_ids.clone(),
            progress: inner.queue.progress(now),
        })
    }

    pub fn task(&self, task_id: &str) -> Option<ReviewTask> {
        self.lock().queue.task(task_id).cloned()
    }

    pub fn status(&self, task_id: &str) -> Option<TaskStatus> {
        let now = self.clock.now();
        self.lock().queue.task(task_id).map(|t| t.status(now))
    }

    /// Reviewed paragraphs of `round` in task order, once all are done.
    pub fn results(&self, round: usize) -> Option<Vec<LabeledParagraph>> {
        self.lock().queue.results(round)
    }

    pub fn now(&self) -> Millis {
        self.clock.now()
    }
}

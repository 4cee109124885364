//! Review queue state. Every change is an [`Event`]; [`Queue::apply`] is
//! the only transition function, so replaying a log rebuilds the queue.

use std::collections::BTreeMap;

use nerloop_core::annotations::{LabeledParagraph, Provenance, Span};
use serde::{Deserialize, Serialize};

/// Milliseconds since the Unix epoch.
pub type Millis = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskStatus {
    Pending,
    Leased,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub reviewer_id: String,
    pub expires_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub task_id: String,
    pub spans: Vec<Span>,
    pub reviewer_id: String,
    pub submitted_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewTask {
    pub task_id: String,
    pub round: usize,
    pub position: usize,
    /// The silver paragraph with its proposed spans.
    pub silver: LabeledParagraph,
    /// Last lease granted. It may have expired.
    pub lease: Option<Lease>,
    pub submission: Option<Submission>,
}

impl ReviewTask {
    /// Status at time `now`. An expired lease counts as pending.
    pub fn status(&self, now: Millis) -> TaskStatus {
        match (&self.submission, &self.lease) {
            (Some(_), _) => TaskStatus::Done,
            (None, Some(l)) if l.expires_at > now => TaskStatus::Leased,
            _ => TaskStatus::Pending,
        }
    }

    /// The reviewed paragraph, once the task is done.
    pub fn gold(&self) -> Option<LabeledParagraph> {
        self.submission
            .as_ref()
            .map(|s| self.silver.relabeled(s.spans.clone(), Provenance::Gold))
    }
}

pub fn task_id(round: usize, position: usize) -> String {
    format!("r{round}-{position:04}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    RoundStarted {
        round: usize,
        paragraphs: Vec<LabeledParagraph>,
        at: Millis,
    },
    Leased {
        task_id: String,
        lease: Lease,
    },
    Submitted(Submission),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub round: usize,
    pub started_at: Millis,
    /// In the order the loop sent them.
    pub task_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub round: Option<usize>,
    pub total: usize,
    pub pending: usize,
    pub leased: usize,
    pub done: usize,
    pub complete: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Queue {
    rounds: BTreeMap<usize, Round>,
    tasks: BTreeMap<String, ReviewTask>,
}

impl Queue {
    pub fn apply(&mut self, event: &Event) {
        match event {
            Event::RoundStarted {
                round,
                paragraphs,
                at,
            } => {
                let mut ids = Vec::with_capacity(paragraphs.len());
                for (position, p) in paragraphs.iter().enumerate() {
                    let id = task_id(*round, position);
                    self.tasks.insert(
                        id.clone(),
                        ReviewTask {
                            task_id: id.clone(),
                            round: *round,
                            position,
                            silver: p.clone(),
                            lease: None,
                            submission: None,
                        },
                    );
                    ids.push(id);
                }
                self.rounds.insert(
                    *round,
                    Round {
                        round: *round,
                        started_at: *at,
                        task_ids: ids,
                    },
                );
            }
            Event::Leased { task_id, lease } => {
                if let Some(t) = self.tasks.get_mut(task_id) {
                    if t.submission.is_none() {
                        t.lease = Some(lease.clone());
                    }
                }
            }
            Event::Submitted(sub) => {
                if let Some(t) = self.tasks.get_mut(&sub.task_id) {
                    if t.submission.is_none() {
                        t.submission = Some(sub.clone());
                    }
                }
            }
        }
    }

    /// The most recently started round.
    pub fn current(&self) -> Option<&Round> {
        self.rounds.values().next_back()
    }

    pub fn round(&self, round: usize) -> Option<&Round> {
        self.rounds.get(&round)
    }

    pub fn task(&self, id: &str) -> Option<&ReviewTask> {
        self.tasks.get(id)
    }

    pub fn tasks_of<'a>(&'a self, round: &'a Round) -> impl Iterator<Item = &'a ReviewTask> + 'a {
        round.task_ids.iter().map(|id| &self.tasks[id])
    }

    /// First task of the current round that nobody holds.
    pub fn next_free(&self, now: Millis) -> Option<&ReviewTask> {
        let round = self.current()?;
        self.tasks_of(round)
            .find(|t| t.status(now) == TaskStatus::Pending)
    }

    /// A live lease held by `reviewer` in the current round.
    pub fn held_by(&self, reviewer: &str, now: Millis) -> Option<&ReviewTask> {
        let round = self.current()?;
        self.tasks_of(round).find(|t| {
            t.status(now) == TaskStatus::Leased
                && t.lease.as_ref().is_some_and(|l| l.reviewer_id == reviewer)
        })
    }

    pub fn progress(&self, now: Millis) -> Progress {
        let Some(round) = self.current() else {
            return Progress::default();
        };
        let mut p = Progress {
            round: Some(round.round),
            total: round.task_ids.len(),
            ..Progress::default()
        };
        for t in self.tasks_of(round) {
            match t.status(now) {
                TaskStatus::Pending => p.pending += 1,
                TaskStatus::Leased => p.leased += 1,
                TaskStatus::Done => p.done += 1,
            }
        }
        p.complete = p.done == p.total;
        p
    }

    /// Reviewed paragraphs of `round` in task order, if every task is done.
    pub fn results(&self, round: usize) -> Option<Vec<LabeledParagraph>> {
        let r = self.rounds.get(&round)?;
        self.tasks_of(r).map(ReviewTask::gold).collect()
    }
}

mod common;

use std::collections::BTreeSet;
use std::sync::{Arc, Barrier};
use std::time::Duration;

use common::{batch, manual, silver};
use nerloop_core::annotations::{Provenance, Span};
use nerloop_service::service::RoundStart;
use nerloop_service::{ManualClock, ReviewService, ServiceError, TaskStatus, DEFAULT_LEASE_TTL};
use proptest::prelude::*;

#[test]
fn concurrent_reviewers_get_disjoint_tasks() {
    let (_, svc) = manual();
    let svc = Arc::new(svc);
    svc.start_round(1, &batch(40)).unwrap();
    let barrier = Arc::new(Barrier::new(8));
    let handles: Vec<_> = (0..8)
        .map(|r| {
            let (svc, barrier) = (svc.clone(), barrier.clone());
            std::thread::spawn(move || {
                let me = format!("rev{r}");
                barrier.wait();
                let mut mine = Vec::new();
                while let Some(t) = svc.lease(&me).unwrap() {
                    svc.submit(&t.task_id, &me, t.silver.spans.clone()).unwrap();
                    mine.push(t.task_id);
                }
                mine
            })
        })
        .collect();
    let all: Vec<String> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
    let unique: BTreeSet<_> = all.iter().collect();
    assert_eq!(all.len(), 40);
    assert_eq!(unique.len(), 40);
    assert!(svc.progress().complete);
}

#[test]
fn two_leases_on_three_tasks_are_disjoint() {
    let (_, svc) = manual();
    svc.start_round(0, &batch(3)).unwrap();
    let a = svc.lease("alice").unwrap().unwrap();
    let b = svc.lease("bob").unwrap().unwrap();
    assert_ne!(a.task_id, b.task_id);
    // Asking again returns the lease already held.
    assert_eq!(svc.lease("alice").unwrap().unwrap().task_id, a.task_id);
    let p = svc.progress();
    assert_eq!((p.pending, p.leased, p.done, p.total), (1, 2, 0, 3));
}

#[test]
fn empty_queue_leases_nothing() {
    let (_, svc) = manual();
    assert!(svc.lease("alice").unwrap().is_none());
    svc.start_round(0, &[]).unwrap();
    assert!(svc.lease("alice").unwrap().is_none());
    assert_eq!(svc.results(0), Some(vec![]));
    assert!(matches!(svc.lease(" "), Err(ServiceError::MissingReviewer)));
}

#[test]
fn expired_lease_recirculates_and_old_holder_is_stale() {
    let (clock, svc) = manual();
    svc.start_round(0, &batch(1)).unwrap();
    let t = svc.lease("alice").unwrap().unwrap();
    clock.advance(DEFAULT_LEASE_TTL - Duration::from_millis(1));
    assert_eq!(svc.status(&t.task_id), Some(TaskStatus::Leased));
    assert!(svc.lease("bob").unwrap().is_none());
    clock.advance(Duration::from_millis(1));
    assert_eq!(svc.status(&t.task_id), Some(TaskStatus::Pending));
    let again = svc.lease("bob").unwrap().unwrap();
    assert_eq!(again.task_id, t.task_id);
    let err = svc.submit(&t.task_id, "alice", vec![]).unwrap_err();
    assert!(matches!(err, ServiceError::StaleLease { .. }));
    assert_eq!(svc.status(&t.task_id), Some(TaskStatus::Leased));
    svc.submit(&t.task_id, "bob", vec![]).unwrap();
    assert_eq!(svc.status(&t.task_id), Some(TaskStatus::Done));
}

#[test]
fn late_submission_is_kept_when_nobody_else_took_the_task() {
    let (clock, svc) = manual();
    svc.start_round(0, &batch(1)).unwrap();
    let t = svc.lease("alice").unwrap().unwrap();
    clock.advance(DEFAULT_LEASE_TTL * 2);
    assert!(!svc.submit(&t.task_id, "alice", vec![]).unwrap().duplicate);
}

#[test]
fn unleased_and_unknown_tasks_are_rejected() {
    let (_, svc) = manual();
    svc.start_round(0, &batch(2)).unwrap();
    let id = svc.current_round().unwrap().task_ids[1].clone();
    assert!(matches!(svc.submit(&id, "alice", vec![]), Err(ServiceError::StaleLease { .. })));
    assert!(matches!(svc.submit("r9-0000", "alice", vec![]), Err(ServiceError::UnknownTask(_))));
}

#[test]
fn invalid_spans_leave_the_task_leased() {
    let (_, svc) = manual();
    svc.start_round(0, &batch(1)).unwrap();
    let t = svc.lease("alice").unwrap().unwrap();
    let mut span = Span::from_tokens(&t.silver.tokens, 0, 0);
    span.end = 10_000;
    let err = svc.submit(&t.task_id, "alice", vec![span]).unwrap_err();
    assert!(matches!(err, ServiceError::InvalidSpans { .. }));
    assert_eq!(svc.status(&t.task_id), Some(TaskStatus::Leased));

    let a = Span::from_tokens(&t.silver.tokens, 0, 1);
    let b = Span::from_tokens(&t.silver.tokens, 1, 2);
    assert!(svc.submit(&t.task_id, "alice", vec![a, b]).is_err());
    assert_eq!(svc.status(&t.task_id), Some(TaskStatus::Leased));
}

#[test]
fn identical_retry_is_acknowledged_once() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let svc = ReviewService::open(&path).unwrap();
    svc.start_round(0, &batch(2)).unwrap();
    let t = svc.lease("alice").unwrap().unwrap();
    let spans = vec![Span::from_tokens(&t.silver.tokens, 2, 2)];
    assert!(!svc.submit(&t.task_id, "alice", spans.clone()).unwrap().duplicate);
    let lines = std::fs::read_to_string(&path).unwrap().lines().count();
    assert!(svc.submit(&t.task_id, "alice", spans.clone()).unwrap().duplicate);
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), lines);
    // A different payload can no longer change a finished task.
    assert!(matches!(svc.submit(&t.task_id, "alice", vec![]), Err(ServiceError::AlreadyDone(_))));
    assert!(matches!(svc.submit(&t.task_id, "bob", spans.clone()), Err(ServiceError::AlreadyDone(_))));
    assert_eq!(svc.task(&t.task_id).unwrap().submission.unwrap().spans, spans);
}

#[test]
fn rounds_are_idempotent_and_ordered() {
    let (_, svc) = manual();
    assert_eq!(svc.start_round(3, &batch(2)).unwrap(), RoundStart::Created);
    assert_eq!(svc.start_round(3, &batch(2)).unwrap(), RoundStart::Existing);
    assert!(matches!(svc.start_round(3, &batch(3)), Err(ServiceError::RoundConflict(_))));
    assert!(matches!(svc.start_round(2, &batch(1)), Err(ServiceError::RoundConflict(_))));
    assert_eq!(svc.start_round(4, &batch(1)).unwrap(), RoundStart::Created);
    assert_eq!(svc.progress().round, Some(4));
    assert_eq!(svc.progress().total, 1);
}

#[test]
fn results_come_back_in_task_order() {
    let (_, svc) = manual();
    let silver_batch = batch(5);
    svc.start_round(0, &silver_batch).unwrap();
    let mut leased = Vec::new();
    for r in ["a", "b", "c", "d", "e"] {
        leased.push((r, svc.lease(r).unwrap().unwrap()));
    }
    for (r, t) in leased.iter().rev() {
        assert!(svc.results(0).is_none());
        svc.submit(&t.task_id, r, vec![]).unwrap();
    }
    let out = svc.results(0).unwrap();
    assert_eq!(out.len(), 5);
    for (o, s) in out.iter().zip(&silver_batch) {
        assert_eq!(o.paragraph, s.paragraph);
        assert!(o.spans.is_empty());
        assert_eq!(o.provenance, Provenance::Gold);
    }
}

#[derive(Debug, Clone)]
enum Op {
    Lease(u8),
    Submit(u8, bool),
    Wait(u32),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0u8..4).prop_map(Op::Lease),
        (0u8..4, any::<bool>()).prop_map(|(r, ok)| Op::Submit(r, ok)),
        (0u32..600).prop_map(Op::Wait),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn queue_counts_are_conserved(tasks in 1usize..8, ops in prop::collection::vec(op(), 0..60)) {
        let clock = Arc::new(ManualClock::new(0));
        let svc = ReviewService::in_memory()
            .with_clock(clock.clone())
            .with_lease_ttl(Duration::from_secs(1_000));
        svc.start_round(0, &batch(tasks)).unwrap();
        let ids = svc.current_round().unwrap().task_ids;
        let mut finished = std::collections::BTreeMap::new();
        for op in ops {
            match op {
                Op::Lease(r) => {
                    let _ = svc.lease(&format!("r{r}")).unwrap();
                }
                Op::Submit(r, ok) => {
                    let me = format!("r{r}");
                    for id in &ids {
                        let t = svc.task(id).unwrap();
                        if t.lease.as_ref().is_some_and(|l| l.reviewer_id == me) {
                            let spans = if ok {
                                vec![Span::from_tokens(&t.silver.tokens, 0, 0)]
                            } else {
                                let mut s = Span::from_tokens(&t.silver.tokens, 0, 0);
                                s.end += 1;
                                vec![s]
                            };
                            let _ = svc.submit(id, &me, spans);
                        }
                    }
                }
                Op::Wait(s) => clock.advance(Duration::from_secs(s as u64)),
            }
            let p = svc.progress();
            prop_assert_eq!(p.pending + p.leased + p.done, tasks);
            prop_assert_eq!(p.complete, p.done == tasks);
            for id in &ids {
                let t = svc.task(id).unwrap();
                if let Some(sub) = t.submission {
                    let prev = finished.entry(id.clone()).or_insert_with(|| sub.clone());
                    prop_assert_eq!(&*prev, &sub);
                }
            }
        }
    }
}

#[test]
fn single_task_lease_stays_exclusive() {
    let (_, svc) = manual();
    svc.start_round(0, &[silver(0)]).unwrap();
    let _ = svc.lease("alice").unwrap().unwrap();
    for r in 0..20 {
        assert!(svc.lease(&format!("other{r}")).unwrap().is_none());
    }
}

mod common;

use std::io::Write;
use std::sync::Arc;

use common::batch;
use nerloop_core::annotations::Span;
use nerloop_service::{ManualClock, ReviewService, ServiceError};

fn session(path: &std::path::Path, clock: Arc<ManualClock>) -> ReviewService {
    ReviewService::open(path).unwrap().with_clock(clock)
}

#[test]
fn restart_replays_every_acknowledged_change() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let clock = Arc::new(ManualClock::new(5));
    let svc = session(&path, clock.clone());
    svc.start_round(0, &batch(4)).unwrap();
    let a = svc.lease("alice").unwrap().unwrap();
    let b = svc.lease("bob").unwrap().unwrap();
    let spans = vec![Span::from_tokens(&a.silver.tokens, 2, 2)];
    svc.submit(&a.task_id, "alice", spans.clone()).unwrap();

    // A second handle on the same file sees the acknowledged submission
    // without the first one being closed.
    let reopened = session(&path, clock.clone());
    assert_eq!(reopened.progress(), svc.progress());
    assert_eq!(reopened.task(&a.task_id), svc.task(&a.task_id));
    drop(reopened);
    drop(svc);

    let svc = session(&path, clock);
    let p = svc.progress();
    assert_eq!((p.pending, p.leased, p.done), (2, 1, 1));
    assert_eq!(svc.task(&a.task_id).unwrap().submission.unwrap().spans, spans);
    // Bob's lease survived and still excludes others.
    assert_eq!(svc.lease("bob").unwrap().unwrap().task_id, b.task_id);
    svc.submit(&b.task_id, "bob", vec![]).unwrap();
    for r in ["carol", "dave"] {
        let t = svc.lease(r).unwrap().unwrap();
        svc.submit(&t.task_id, r, vec![]).unwrap();
    }
    assert!(svc.results(0).is_some());
}

#[test]
fn torn_tail_is_dropped_and_appends_continue() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let clock = Arc::new(ManualClock::new(0));
    let svc = session(&path, clock.clone());
    svc.start_round(0, &batch(2)).unwrap();
    drop(svc);
    let intact = std::fs::read_to_string(&path).unwrap();
    std::fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .unwrap()
        .write_all(br#"{"event":"leased","task_id":"r0-00"#)
        .unwrap();

    let svc = session(&path, clock.clone());
    assert_eq!(std::fs::read_to_string(&path).unwrap(), intact);
    let t = svc.lease("alice").unwrap().unwrap();
    drop(svc);
    let svc = session(&path, clock);
    assert_eq!(svc.task(&t.task_id).unwrap().lease.unwrap().reviewer_id, "alice");
}

#[test]
fn corrupt_middle_line_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let svc = ReviewService::open(&path).unwrap();
    svc.start_round(0, &batch(1)).unwrap();
    drop(svc);
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, format!("not json\n{text}")).unwrap();
    assert!(matches!(ReviewService::open(&path), Err(ServiceError::Journal(_))));
}

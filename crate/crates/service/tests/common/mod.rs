#![allow(dead_code)]

use std::sync::Arc;

use nerloop_core::annotations::{LabeledParagraph, Provenance, Span};
use nerloop_core::corpus::Paragraph;
use nerloop_service::{ManualClock, ReviewService};

pub const TEXTS: &[&str] = &[
    "Patients received ribavirin and arbidol daily.",
    "Silver nanoparticles were tested against the virus.",
    "Remdesivir 200 mg was given on day one.",
    "No treatment was given.",
    "Fusidic acid and zinc were compared, then dropped.",
];

/// Silver paragraph `i`, with a span on every word ending in one of a
/// few drug-like suffixes.
pub fn silver(i: usize) -> LabeledParagraph {
    let text = TEXTS[i % TEXTS.len()];
    let p = Paragraph::new(format!("doc{}", i / TEXTS.len()), i % TEXTS.len(), text);
    let mut lp = LabeledParagraph::unlabeled(p, Provenance::SilverModel);
    lp.spans = lp
        .tokens
        .iter()
        .filter(|t| ["in", "ol", "er", "ir"].iter().any(|s| t.text.ends_with(s)))
        .map(|t| Span::from_tokens(&lp.tokens, t.id, t.id))
        .collect();
    lp
}

pub fn batch(n: usize) -> Vec<LabeledParagraph> {
    (0..n).map(silver).collect()
}

pub fn manual() -> (Arc<ManualClock>, ReviewService) {
    let clock = Arc::new(ManualClock::new(1_000_000));
    let svc = ReviewService::in_memory().with_clock(clock.clone());
    (clock, svc)
}

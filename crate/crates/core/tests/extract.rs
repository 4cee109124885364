use std::collections::HashMap;

use nerloop_core::annotations::Span;
use nerloop_core::corpus::{Paragraph, ParagraphId, Token};
use nerloop_core::extract::{
    classify_balanced, extract_corpus, normalize_entity, Balance, Model, SpanTagger, TallyMap,
};
use nerloop_core::synth::{SynthConfig, SynthCorpus};
use proptest::prelude::*;

/// Returns the true spans of each paragraph.
struct Oracle(HashMap<ParagraphId, Vec<Span>>);

impl SpanTagger for Oracle {
    fn tag(&self, paragraph: &Paragraph, _tokens: &[Token]) -> Vec<Span> {
        self.0.get(&paragraph.id()).cloned().unwrap_or_default()
    }
}

#[test]
fn oracle_models_count_planted_mentions() {
    let s = SynthCorpus::generate(&SynthConfig {
        paragraphs: 400,
        ..SynthConfig::default()
    });
    let oracle = Oracle(s.truth_map());
    let report = extract_corpus(s.corpus.paragraphs(), &oracle, &oracle, 3).unwrap();
    assert_eq!(report.tallies.len(), s.mention_counts.len());
    for t in &report.tallies {
        let planted = s.mention_counts[&t.surface] as u64;
        assert_eq!((t.count_a, t.count_b), (planted, planted), "{}", t.surface);
        assert_eq!(t.balance(), Balance::Balanced);
    }
}

#[test]
fn single_paragraph_tally() {
    let p = Paragraph::new("doc", 0, "Patients received ribavirin.");
    let tokens = nerloop_core::corpus::tokenize(&p.text);
    let oracle = Oracle([(p.id(), vec![Span::from_tokens(&tokens, 2, 2)])].into_iter().collect());
    let report = extract_corpus(&[p], &oracle, &oracle, 4).unwrap();
    assert_eq!(report.tallies.len(), 1);
    let t = &report.tallies[0];
    assert_eq!((t.surface.as_str(), t.count_a, t.count_b), ("ribavirin", 1, 1));
    assert!(t.documents.contains("doc"));
}

#[test]
fn worker_count_never_changes_the_report() {
    let s = SynthCorpus::generate(&SynthConfig {
        paragraphs: 37,
        ..SynthConfig::default()
    });
    let oracle = Oracle(s.truth_map());
    let base = extract_corpus(s.corpus.paragraphs(), &oracle, &oracle, 1).unwrap();
    for workers in [2, 3, 5, 36, 37, 64] {
        assert_eq!(extract_corpus(s.corpus.paragraphs(), &oracle, &oracle, workers).unwrap(), base);
    }
}

fn event() -> impl Strategy<Value = (String, bool)> {
    (prop::sample::select(vec!["ribavirin", "Ribavirin,", "arbidol", "(zinc)", "acid"]), any::<bool>())
        .prop_map(|(s, a)| (s.to_string(), a))
}

fn tally(events: &[(String, bool)]) -> TallyMap {
    let mut t = TallyMap::default();
    for (i, (s, a)) in events.iter().enumerate() {
        t.record(s, &format!("d{}", i % 3), if *a { Model::A } else { Model::B });
    }
    t
}

proptest! {
    #[test]
    fn merge_is_order_free(events in prop::collection::vec(event(), 0..40), cuts in prop::collection::vec(0usize..40, 0..5)) {
        let whole = tally(&events);
        let mut bounds: Vec<usize> = cuts.into_iter().map(|c| c.min(events.len())).collect();
        bounds.push(0);
        bounds.push(events.len());
        bounds.sort_unstable();
        // Shards keep global event indices so document ids line up.
        let shards: Vec<TallyMap> = bounds.windows(2).map(|w| {
            let mut t = TallyMap::default();
            for (i, (s, a)) in events.iter().enumerate().take(w[1]).skip(w[0]) {
                t.record(s, &format!("d{}", i % 3), if *a { Model::A } else { Model::B });
            }
            t
        }).collect();
        let mut forward = TallyMap::default();
        for s in shards.iter().cloned() {
            forward.merge(s);
        }
        let mut backward = TallyMap::default();
        for s in shards.into_iter().rev() {
            backward.merge(s);
        }
        prop_assert_eq!(&forward, &whole);
        prop_assert_eq!(&backward, &whole);
    }

    #[test]
    fn balance_is_symmetric(a in 0u64..10_000, b in 0u64..10_000) {
        prop_assert_eq!(classify_balanced(a, b), classify_balanced(b, a));
    }

    #[test]
    fn minority_detections_keep_balance(a in 1u64..1000, b in 1u64..1000, extra in 0u64..1000) {
        prop_assume!(classify_balanced(a, b) == Balance::Balanced);
        let (lo, hi) = (a.min(b), a.max(b));
        let grown = (lo + extra).min(hi);
        prop_assert_eq!(classify_balanced(grown, hi), Balance::Balanced);
    }

    #[test]
    fn normalization_is_idempotent(s in "\\PC{0,20}") {
        let once = normalize_entity(&s);
        prop_assert_eq!(normalize_entity(&once), once);
    }
}

//! Corpus-wide extraction with two tagger variants, per-entity detection
//! tallies, the factor-of-ten agreement rule and reference-list comparison.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotations::Span;
use crate::corpus::{char_slice, tokenize, Paragraph, Token};
use crate::lexicon::{normalize_term, Lexicon};
use crate::tagger::TaggerModel;

/// Anything that proposes entity spans for a tokenized paragraph.
pub trait SpanTagger: Sync {
    fn tag(&self, paragraph: &Paragraph, tokens: &[Token]) -> Vec<Span>;
}

impl SpanTagger for TaggerModel {
    fn tag(&self, paragraph: &Paragraph, tokens: &[Token]) -> Vec<Span> {
        self.predict_tokens(paragraph.clone(), tokens.to_vec()).spans
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExtractError {
    #[error("workers must be at least 1")]
    NoWorkers,
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("report line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// Casefolds, collapses whitespace and trims non-alphanumeric characters
/// from both ends.
pub fn normalize_entity(surface: &str) -> String {
    normalize_term(surface)
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_string()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityTally {
    pub surface: String,
    pub count_a: u64,
    pub count_b: u64,
    pub documents: BTreeSet<String>,
}

impl EntityTally {
    pub fn total(&self) -> u64 {
        self.count_a + self.count_b
    }

    pub fn balance(&self) -> Balance {
        classify_balanced(self.count_a, self.count_b)
    }

    fn absorb(&mut self, other: EntityTally) {
        self.count_a += other.count_a;
        self.count_b += other.count_b;
        self.documents.extend(other.documents);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Balance {
    Balanced,
    Imbalanced,
}

/// Balanced iff both models detected the entity and the larger count is at
/// most ten times the smaller.
pub fn classify_balanced(count_a: u64, count_b: u64) -> Balance {
    let (lo, hi) = if count_a <= count_b {
        (count_a, count_b)
    } else {
        (count_b, count_a)
    };
    if lo >= 1 && hi <= lo.saturating_mul(10) {
        Balance::Balanced
    } else {
        Balance::Imbalanced
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    A,
    B,
}

/// Tallies keyed by normalized surface. Merging is a pure, order-free sum.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TallyMap {
    entries: BTreeMap<String, EntityTally>,
}

impl TallyMap {
    pub fn record(&mut self, surface: &str, doc_id: &str, model: Model) {
        let key = normalize_entity(surface);
        if key.is_empty() {
            return;
        }
        let entry = self.entries.entry(key.clone()).or_insert_with(|| EntityTally {
            surface: key,
            ..Default::default()
        });
        match model {
            Model::A => entry.count_a += 1,
            Model::B => entry.count_b += 1,
        }
        entry.documents.insert(doc_id.to_string());
    }

    pub fn merge(&mut self, other: TallyMap) {
        for (key, tally) in other.entries {
            match self.entries.get_mut(&key) {
                Some(existing) => existing.absorb(tally),
                None => {
                    self.entries.insert(key, tally);
                }
            }
        }
    }

    pub fn get(&self, surface: &str) -> Option<&EntityTally> {
        self.entries.get(surface)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn into_report(self, paragraphs: usize) -> ExtractionReport {
        ExtractionReport::new(self.entries.into_values().collect(), paragraphs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Pool {
    All,
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub paragraphs: usize,
    /// Ranked: total detections descending, then surface ascending.
    pub tallies: Vec<EntityTally>,
}

impl ExtractionReport {
    pub fn new(mut tallies: Vec<EntityTally>, paragraphs: usize) -> Self {
        tallies.sort_by(|a, b| {
            b.total()
                .cmp(&a.total())
                .then_with(|| a.surface.cmp(&b.surface))
        });
        Self {
            paragraphs,
            tallies,
        }
    }

    pub fn balanced(&self) -> impl Iterator<Item = &EntityTally> {
        self.tallies
            .iter()
            .filter(|t| t.balance() == Balance::Balanced)
    }

    /// Ranked entities of a pool.
    pub fn pool(&self, pool: Pool) -> Vec<&EntityTally> {
        match pool {
            Pool::All => self.tallies.iter().collect(),
            Pool::Balanced => self.balanced().collect(),
        }
    }

    /// Tab-separated `surface, count_a, count_b, balanced, rank`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("surface\tcount_a\tcount_b\tbalanced\trank\n");
        for (i, t) in self.tallies.iter().enumerate() {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                t.surface,
                t.count_a,
                t.count_b,
                t.balance() == Balance::Balanced,
                i + 1
            );
        }
        s
    }

    /// Parses [`to_tsv`](Self::to_tsv) output. Document sets and the
    /// paragraph count are not part of the table and come back empty.
    pub fn from_tsv(text: &str) -> Result<Self, ExtractError> {
        let mut lines = text.lines().enumerate();
        let header = lines.next().map(|(_, l)| l);
        if header != Some("surface\tcount_a\tcount_b\tbalanced\trank") {
            return Err(ExtractError::Malformed {
                line: 1,
                message: "expected the header surface, count_a, count_b, balanced, rank".into(),
            });
        }
        let mut tallies = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| ExtractError::Malformed {
                line: i + 1,
                message,
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(bad(format!("expected 5 columns, found {}", cols.len())));
            }
            let count = |s: &str| s.parse::<u64>().map_err(|e| bad(format!("{s:?}: {e}")));
            tallies.push(EntityTally {
                surface: cols[0].to_string(),
                count_a: count(cols[1])?,
                count_b: count(cols[2])?,
                documents: BTreeSet::new(),
            });
        }
        Ok(Self::new(tallies, 0))
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self, ExtractError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ExtractError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_tsv(&text)
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<(), ExtractError> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|source| ExtractError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn tally_shard(shard: &[Paragraph], model_a: &dyn SpanTagger, model_b: &dyn SpanTagger) -> TallyMap {
    let mut tally = TallyMap::default();
    for p in shard {
        let tokens = tokenize(&p.text);
        for (model, which) in [(model_a, Model::A), (model_b, Model::B)] {
            for span in &model.tag(p, &tokens) {
                tally.record(&char_slice(&p.text, span.start, span.end), &p.doc_id, which);
            }
        }
    }
    tally
}

/// Decodes every paragraph with both models over `workers` contiguous
/// shards. The report does not depend on `workers`.
pub fn extract_corpus(
    paragraphs: &[Paragraph],
    model_a: &dyn SpanTagger,
    model_b: &dyn SpanTagger,
    workers: usize,
) -> Result<ExtractionReport, ExtractError> {
    if workers == 0 {
        return Err(ExtractError::NoWorkers);
    }
    let shard_len = paragraphs.len().div_ceil(workers).max(1);
    let shards: Vec<TallyMap> = std::thread::scope(|scope| {
        let handles: Vec<_> = paragraphs
            .chunks(shard_len)
            .map(|shard| scope.spawn(move || tally_shard(shard, model_a, model_b)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("extraction worker panicked"))
            .collect()
    });
    let mut merged = TallyMap::default();
    for shard in shards {
        merged.merge(shard);
    }
    log::info!(
        "extracted {} distinct entities from {} paragraphs",
        merged.len(),
        paragraphs.len()
    );
    Ok(merged.into_report(paragraphs.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchRates {
    /// Number of ranked entities compared (`top_k` clamped to the pool).
    pub considered: usize,
    pub exact: usize,
    pub partial: usize,
    pub exact_rate: f64,
    pub exact_plus_partial_rate: f64,
}

/// Words of every multi-word reference name or alias.
fn reference_words(reference: &Lexicon) -> HashSet<String> {
    reference
        .terms()
        .chain(reference.aliases().map(|(alias, _)| alias))
        .filter(|name| name.contains(' '))
        .flat_map(|name| name.split(' ').map(str::to_string))
        .collect()
}

/// Compares the top `top_k` entities of `pool` against `reference`. An
/// entity matches exactly when it equals a reference name or alias, and
/// partially when it equals one whole word of a multi-word reference name.
/// Rates are fractions of the entities considered, which is `top_k`
/// clamped to the pool size.
pub fn compare_reference(
    report: &ExtractionReport,
    reference: &Lexicon,
    top_k: usize,
    pool: Pool,
) -> MatchRates {
    let ranked = report.pool(pool);
    let considered = top_k.min(ranked.len());
    let words = reference_words(reference);
    let mut exact = 0;
    let mut partial = 0;
    for t in &ranked[..considered] {
        if reference.lookup(&t.surface).is_some() {
            exact += 1;
        } else if words.contains(&t.surface) {
            partial += 1;
        }
    }
    let rate = |n: usize| {
        if considered == 0 {
            0.0
        } else {
            n as f64 / considered as f64
        }
    };
    MatchRates {
        considered,
        exact,
        partial,
        exact_rate: rate(exact),
        exact_plus_partial_rate: rate(exact + partial),
    }
}

/// Entities among the top `top_k` of a pool that match the reference
/// neither exactly nor partially, for manual review.
pub fn unmatched(report: &ExtractionReport, reference: &Lexicon, top_k: usize, pool: Pool) -> Vec<String> {
    let words = reference_words(reference);
    report
        .pool(pool)
        .into_iter()
        .take(top_k)
        .filter(|t| reference.lookup(&t.surface).is_none() && !words.contains(&t.surface))
        .map(|t| t.surface.clone())
        .collect()
}

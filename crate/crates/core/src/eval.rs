//! Entity-level scoring, K-fold cross-validation and context-token analysis.
//!
//! Scoring counts a prediction as a true positive only when it covers
//! exactly the tokens of a gold span. A prediction that overlaps a gold
//! span without matching it (for example `sofosbuvir ,` against
//! `sofosbuvir`) is a false positive, and that gold span is *not* also
//! counted as a false negative. A gold span is a false negative only when no
//! prediction touches it at all.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Range};

use serde::{Deserialize, Serialize};

use crate::annotations::{LabeledParagraph, Span};
use crate::corpus::{classify_token, TokenClass};
use crate::tagger::{TaggerError, TaggerModel, Trainer};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("gold and predicted paragraphs differ: {0}")]
    ParagraphMismatch(String),
    #[error("datasets are misaligned: {0}")]
    Misaligned(String),
    #[error("need n >= k >= 2 for k-fold (n = {n}, k = {k})")]
    InvalidFolds { n: usize, k: usize },
    #[error("context window must be at least 1")]
    InvalidWindow,
    #[error(transparent)]
    Tagger(#[from] TaggerError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvalCounts {
    #[serde(rename = "tp")]
    pub true_positives: usize,
    #[serde(rename = "fp")]
    pub false_positives: usize,
    #[serde(rename = "fn")]
    pub false_negatives: usize,
}

impl EvalCounts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        Self {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
        }
    }

    pub fn metrics(&self) -> Metrics {
        prf1(*self)
    }
}

impl Add for EvalCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(
            self.true_positives + o.true_positives,
            self.false_positives + o.false_positives,
            self.false_negatives + o.false_negatives,
        )
    }
}

impl AddAssign for EvalCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sum for EvalCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Precision, recall and F1 as fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn prf1(c: EvalCounts) -> Metrics {
    let tp = c.true_positives as f64;
    let precision = ratio(tp, tp + c.false_positives as f64);
    let recall = ratio(tp, tp + c.false_negatives as f64);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    Metrics {
        precision,
        recall,
        f1,
    }
}

/// Counts plus the boundary cases the counting rule treats specially.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScoreDetail {
    pub counts: EvalCounts,
    /// Gold spans overlapped only by inexact predictions (neither TP nor FN).
    pub boundary_errors: usize,
    /// Predictions overlapping two or more gold spans.
    pub multi_gold_overlaps: usize,
}

pub fn score_entities(gold: &[Span], pred: &[Span]) -> EvalCounts {
    score_entities_detailed(gold, pred).counts
}

pub fn score_entities_detailed(gold: &[Span], pred: &[Span]) -> ScoreDetail {
    let mut detail = ScoreDetail::default();
    for p in pred {
        if gold.iter().any(|g| g.same_tokens(p)) {
            detail.counts.true_positives += 1;
        } else {
            detail.counts.false_positives += 1;
        }
        if gold.iter().filter(|g| g.overlaps(p)).count() >= 2 {
            detail.multi_gold_overlaps += 1;
        }
    }
    for g in gold {
        if pred.iter().any(|p| p.same_tokens(g)) {
            continue;
        }
        if pred.iter().any(|p| p.overlaps(g)) {
            detail.boundary_errors += 1;
        } else {
            detail.counts.false_negatives += 1;
        }
    }
    detail
}

/// Scores two labelings of the same paragraph.
pub fn score_paragraph(
    gold: &LabeledParagraph,
    pred: &LabeledParagraph,
) -> Result<ScoreDetail, EvalError> {
    if gold.text() != pred.text() || gold.tokens != pred.tokens {
        return Err(EvalError::ParagraphMismatch(format!(
            "{} vs {}",
            gold.paragraph.id(),
            pred.paragraph.id()
        )));
    }
    Ok(score_entities_detailed(&gold.spans, &pred.spans))
}

pub fn score_dataset(
    gold: &[LabeledParagraph],
    pred: &[LabeledParagraph],
) -> Result<EvalCounts, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::Misaligned(format!(
            "{} gold vs {} predicted paragraphs",
            gold.len(),
            pred.len()
        )));
    }
    gold.iter()
        .zip(pred)
        .map(|(g, p)| score_paragraph(g, p).map(|d| d.counts))
        .sum()
}

/// Decodes every gold paragraph with `model` and scores the result.
pub fn evaluate_model(model: &TaggerModel, gold: &[LabeledParagraph]) -> EvalCounts {
    gold.iter()
        .map(|g| {
            let pred = model.predict_tokens(g.paragraph.clone(), g.tokens.clone());
            score_entities(&g.spans, &pred.spans)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub k: usize,
    pub fold_sizes: Vec<usize>,
    /// Fold id of each dataset index.
    pub assignments: Vec<usize>,
}

impl FoldSpec {
    pub fn range(&self, fold: usize) -> Range<usize> {
        let start: usize = self.fold_sizes[..fold].iter().sum();
        start..start + self.fold_sizes[fold]
    }
}

/// Contiguous folds in dataset order: the first `k - n % k` folds hold
/// `n / k` items and the rest one more.
pub fn kfold_split(n: usize, k: usize) -> Result<FoldSpec, EvalError> {
    if k < 2 || n < k {
        return Err(EvalError::InvalidFolds { n, k });
    }
    let small = n / k;
    let n_small = k - n % k;
    let fold_sizes: Vec<usize> = (0..k)
        .map(|i| if i < n_small { small } else { small + 1 })
        .collect();
    let assignments = fold_sizes
        .iter()
        .enumerate()
        .flat_map(|(fold, &size)| std::iter::repeat_n(fold, size))
        .collect();
    Ok(FoldSpec {
        k,
        fold_sizes,
        assignments,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_size: usize,
    pub counts: EvalCounts,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KFoldReport {
    pub folds: Vec<FoldResult>,
    /// Arithmetic mean of the per-fold F1 scores.
    pub macro_f1: f64,
}

impl KFoldReport {
    /// Tab-separated table: one row per fold (percentages, one decimal),
    /// then an `average` row holding the mean F1.
    pub fn to_table(&self) -> String {
        let mut s = String::from("fold\tprecision\trecall\tf1\n");
        for f in &self.folds {
            let _ = writeln!(
                s,
                "{}\t{:.1}\t{:.1}\t{:.1}",
                f.fold + 1,
                f.metrics.precision * 100.0,
                f.metrics.recall * 100.0,
                f.metrics.f1 * 100.0
            );
        }
        let _ = writeln!(s, "average\t\t\t{:.1}", self.macro_f1 * 100.0);
        s
    }
}

/// K-fold cross-validation over two index-aligned labelings of the same
/// paragraphs. Round `i` trains on every fold of `train_set` except `i` and
/// tests on fold `i` of `test_source`; fold `i` of `train_set` is unused in
/// that round. Each round trains with seed `trainer.config.seed + i`.
pub fn kfold_run(
    train_set: &[LabeledParagraph],
    test_source: &[LabeledParagraph],
    k: usize,
    trainer: &Trainer,
) -> Result<KFoldReport, EvalError> {
    if train_set.len() != test_source.len() {
        return Err(EvalError::Misaligned(format!(
            "{} training vs {} test paragraphs",
            train_set.len(),
            test_source.len()
        )));
    }
    if let Some(i) = (0..train_set.len()).find(|&i| train_set[i].text() != test_source[i].text()) {
        return Err(EvalError::Misaligned(format!("paragraph {i} has different text")));
    }
    let spec = kfold_split(train_set.len(), k)?;
    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let range = spec.range(fold);
        let training: Vec<LabeledParagraph> = train_set
            .iter()
            .enumerate()
            .filter(|(i, _)| !range.contains(i))
            .map(|(_, lp)| lp.clone())
            .collect();
        let mut round = trainer.clone();
        round.config.seed = trainer.config.seed.wrapping_add(fold as u64);
        let model = round.train(&training, None)?;
        let counts = evaluate_model(&model, &test_source[range.clone()]);
        folds.push(FoldResult {
            fold,
            test_size: range.len(),
            counts,
            metrics: prf1(counts),
        });
    }
    let macro_f1 = folds.iter().map(|f| f.metrics.f1).sum::<f64>() / k as f64;
    Ok(KFoldReport { folds, macro_f1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ContextScope {
    /// Predicted entities with no exactly matching gold span.
    AroundIncorrect,
    /// Predicted entities that exactly match a gold span.
    AroundCorrect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextStats {
    pub window: usize,
    pub include_stopwords: bool,
    pub scope: ContextScope,
    pub entities: usize,
    pub counts: BTreeMap<String, usize>,
}

impl ContextStats {
    /// Tokens by count descending, ties broken lexicographically.
    pub fn ranked(&self) -> Vec<(&str, usize)> {
        let mut v: Vec<(&str, usize)> = self.counts.iter().map(|(t, &c)| (t.as_str(), c)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v
    }

    pub fn to_table(&self, top: usize) -> String {
        let mut s = String::from("rank\ttoken\tcount\n");
        for (i, (tok, c)) in self.ranked().into_iter().take(top).enumerate() {
            let _ = writeln!(s, "{}\t{}\t{}", i + 1, tok, c);
        }
        s
    }
}

/// Counts the tokens within `window` positions of each in-scope predicted
/// entity. Distance is measured to the nearest entity token; the entity's
/// own tokens are never counted. With `include_stopwords = false`, stopword
/// and punctuation tokens are dropped.
///
/// `data` pairs each gold paragraph with the spans predicted for it.
pub fn context_frequencies(
    data: &[(LabeledParagraph, Vec<Span>)],
    window: usize,
    include_stopwords: bool,
    scope: ContextScope,
) -> Result<ContextStats, EvalError> {
    if window == 0 {
        return Err(EvalError::InvalidWindow);
    }
    let mut stats = ContextStats {
        window,
        include_stopwords,
        scope,
        entities: 0,
        counts: BTreeMap::new(),
    };
    for (gold, pred) in data {
        for p in pred {
            let correct = gold.spans.iter().any(|g| g.same_tokens(p));
            let in_scope = match scope {
                ContextScope::AroundCorrect => correct,
                ContextScope::AroundIncorrect => !correct,
            };
            if !in_scope {
                continue;
            }
            stats.entities += 1;
            let lo = p.token_start.saturating_sub(window);
            let hi = (p.token_end + window).min(gold.tokens.len().saturating_sub(1));
            for j in (lo..=hi).filter(|j| *j < p.token_start || *j > p.token_end) {
                let text = &gold.tokens[j].text;
                if !include_stopwords
                    && matches!(classify_token(text), TokenClass::Stopword | TokenClass::Punct)
                {
                    continue;
                }
                *stats.counts.entry(text.clone()).or_default() += 1;
            }
        }
    }
    Ok(stats)
}

//! The three-phase model-in-the-loop annotation workflow.
//!
//! * Phase A (bootstrap): pull paragraphs with at least one lexicon match,
//!   auto-label them and have the annotator verify them.
//! * Phase B (test set): while fewer than `nt` paragraphs are verified,
//!   train on the first 60% of them (acquisition order), validate on the
//!   rest, select `n` uncertain paragraphs and verify them. The first `nt`
//!   verified paragraphs become the fixed test set `T`; the remainder
//!   starts the labeled set `G`.
//! * Phase C (labeled set): train on `G`, score on `T`, and stop once the
//!   F1 improvement over the previous round is at most `epsilon`;
//!   otherwise select and verify `n` more paragraphs for `G`.
//!
//! The state is checkpointed after every annotator round. Everything else
//! (stream position, training seeds, simulated annotations) is a function
//! of the saved state, so a resumed run is identical to an uninterrupted
//! one.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotations::{
    check_spans, iob_to_spans, to_jsonl_line, LabeledParagraph, Provenance, Span,
};
use crate::corpus::{classify_token, Corpus, CorpusStream, ParagraphId, TokenClass};
use crate::eval::{evaluate_model, prf1, EvalCounts};
use crate::lexicon::{auto_label, Lexicon};
use crate::tagger::{FeatureConfig, TaggerError, TaggerModel, TrainConfig, Trainer};

pub const STATE_FORMAT: &str = "nerloop-state";
pub const STATE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum LoopError {
    #[error("invalid loop parameters: {0}")]
    InvalidParams(String),
    #[error("no paragraph in the corpus matches the lexicon")]
    EmptyBootstrap,
    #[error("annotator failed in round {round}: {message}")]
    Annotator { round: usize, message: String },
    #[error("annotator returned invalid paragraphs in round {round}: {message}")]
    InvalidAnnotation { round: usize, message: String },
    #[error("state file does not match this run: {0}")]
    StateMismatch(String),
    #[error("state file: {0}")]
    Format(String),
    #[error("state file I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tagger(#[from] TaggerError),
    #[error("test set changed after phase C began")]
    TestSetMutated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopParams {
    /// Paragraphs in the bootstrap round.
    pub n0: usize,
    /// Paragraphs per later round.
    pub n: usize,
    /// Size of the test set.
    pub nt: usize,
    pub epsilon: f64,
    pub conf_min: f64,
    pub conf_max: f64,
}

impl Default for LoopParams {
    fn default() -> Self {
        Self {
            n0: 278,
            n: 120,
            nt: 500,
            epsilon: 0.0,
            conf_min: 0.45,
            conf_max: 0.55,
        }
    }
}

impl LoopParams {
    pub fn validate(&self) -> Result<(), LoopError> {
        let bad = |m: &str| Err(LoopError::InvalidParams(m.to_string()));
        if self.n0 == 0 || self.n == 0 || self.nt == 0 {
            return bad("n0, n and nt must be positive");
        }
        if !self.epsilon.is_finite() {
            return bad("epsilon must be finite");
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.conf_min) || !unit.contains(&self.conf_max) {
            return bad("conf_min and conf_max must lie in [0, 1]");
        }
        if self.conf_min > self.conf_max {
            return bad("conf_min must not exceed conf_max");
        }
        Ok(())
    }
}

/// Everything that determines a run besides the corpus, lexicon and
/// annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub params: LoopParams,
    pub stream_seed: u64,
    /// Round `r` trains with seed `train.seed + r`.
    pub train: TrainConfig,
    pub features: FeatureConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: LoopParams::default(),
            stream_seed: crate::corpus::DEFAULT_STREAM_SEED,
            train: TrainConfig::default(),
            features: FeatureConfig::full(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
    C,
    #[serde(rename = "DONE")]
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    NoImprovement,
    StreamExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundScore {
    pub round: usize,
    pub f1: f64,
    pub counts: EvalCounts,
}

/// One annotator round. `round` is the id passed to the annotator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub phase: Phase,
    pub requested: usize,
    pub received: usize,
    /// Stream paragraphs inspected to fill the round.
    pub examined: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExhaustionFlags {
    pub bootstrap: bool,
    pub test_set: bool,
    pub labeled_set: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub config: RunConfig,
    pub corpus_paragraphs: usize,
    pub phase: Phase,
    /// Verified paragraphs of phases A and B, in acquisition order.
    pub bootstrap: Vec<LabeledParagraph>,
    pub test: Vec<LabeledParagraph>,
    pub gold: Vec<LabeledParagraph>,
    /// Annotator rounds completed.
    pub round: usize,
    pub rounds: Vec<RoundRecord>,
    /// F1 on the 40% validation split before each phase-B selection.
    pub phase_b_scores: Vec<RoundScore>,
    /// F1 on `T` of each phase-C round trained on `G`.
    pub f1_history: Vec<RoundScore>,
    /// Phase-C rounds that trained on the last phase-B split because `G`
    /// was empty.
    pub guard_rounds: usize,
    /// Size of the most recent phase-B training split (a prefix of
    /// `bootstrap`).
    pub last_train_len: usize,
    pub cursor: usize,
    /// SHA-256 of `T`, fixed when phase C begins.
    pub test_hash: Option<String>,
    pub exhausted: ExhaustionFlags,
    pub stop_reason: Option<StopReason>,
}

impl LoopState {
    pub fn new(config: RunConfig, corpus_paragraphs: usize) -> Self {
        Self {
            config,
            corpus_paragraphs,
            phase: Phase::A,
            bootstrap: Vec::new(),
            test: Vec::new(),
            gold: Vec::new(),
            round: 0,
            rounds: Vec::new(),
            phase_b_scores: Vec::new(),
            f1_history: Vec::new(),
            guard_rounds: 0,
            last_train_len: 0,
            cursor: 0,
            test_hash: None,
            exhausted: ExhaustionFlags::default(),
            stop_reason: None,
        }
    }

    pub fn final_f1(&self) -> Option<f64> {
        self.f1_history.last().map(|s| s.f1)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LoopError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let mut out = File::create(&tmp)?;
            out.write_all(self.to_json()?.as_bytes())?;
            out.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, LoopError> {
        let doc = StateRef {
            format: STATE_FORMAT,
            version: STATE_VERSION,
            state: self,
        };
        serde_json::to_string(&doc).map_err(|e| LoopError::Format(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LoopError> {
        let doc: StateDoc = serde_json::from_reader(BufReader::new(File::open(path)?))
            .map_err(|e| LoopError::Format(e.to_string()))?;
        if doc.format != STATE_FORMAT {
            return Err(LoopError::Format(format!("unknown format {:?}", doc.format)));
        }
        if doc.version != STATE_VERSION {
            return Err(LoopError::Format(format!("unsupported version {}", doc.version)));
        }
        Ok(doc.state)
    }
}

#[derive(Serialize)]
struct StateRef<'a> {
    format: &'a str,
    version: u32,
    #[serde(flatten)]
    state: &'a LoopState,
}

#[derive(Deserialize)]
struct StateDoc {
    format: String,
    version: u32,
    #[serde(flatten)]
    state: LoopState,
}

/// SHA-256 over the JSONL serialization of a dataset.
pub fn dataset_hash(lps: &[LabeledParagraph]) -> String {
    let mut h = Sha256::new();
    for lp in lps {
        h.update(to_jsonl_line(lp).as_bytes());
        h.update(b"\n");
    }
    format!("{:x}", h.finalize())
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct AnnotatorError(pub String);

/// Turns silver paragraphs into verified ones. Output must hold the same
/// paragraphs in the same order.
pub trait Annotator {
    fn verify(
        &mut self,
        round: usize,
        silver: &[LabeledParagraph],
    ) -> Result<Vec<LabeledParagraph>, AnnotatorError>;
}

/// Accepts every silver labeling as is.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityAnnotator;

impl Annotator for IdentityAnnotator {
    fn verify(
        &mut self,
        _round: usize,
        silver: &[LabeledParagraph],
    ) -> Result<Vec<LabeledParagraph>, AnnotatorError> {
        Ok(silver
            .iter()
            .map(|lp| lp.relabeled(lp.spans.clone(), Provenance::Gold))
            .collect())
    }
}

/// Answers from a truth table, perturbing each true entity with
/// probability `error_rate` by dropping it, shifting one boundary by a
/// token, or adding a spurious one-token entity next to it.
///
/// The perturbation of a paragraph depends only on `(seed, paragraph id)`.
#[derive(Debug, Clone)]
pub struct SimulatedAnnotator {
    truth: HashMap<ParagraphId, Vec<Span>>,
    error_rate: f64,
    seed: u64,
}

impl SimulatedAnnotator {
    pub fn new(
        truth: HashMap<ParagraphId, Vec<Span>>,
        error_rate: f64,
        seed: u64,
    ) -> Result<Self, LoopError> {
        if !(0.0..=1.0).contains(&error_rate) {
            return Err(LoopError::InvalidParams("error_rate must lie in [0, 1]".into()));
        }
        Ok(Self {
            truth,
            error_rate,
            seed,
        })
    }

    /// Truth table from a gold dataset.
    pub fn from_dataset(truth: &[LabeledParagraph], error_rate: f64, seed: u64) -> Result<Self, LoopError> {
        let map = truth
            .iter()
            .map(|lp| (lp.paragraph.id(), lp.spans.clone()))
            .collect();
        Self::new(map, error_rate, seed)
    }

    fn rng_for(&self, id: &ParagraphId) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(id.doc_id.as_bytes());
        h.update([0]);
        h.update((id.para_index as u64).to_le_bytes());
        let digest = h.finalize();
        ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().unwrap()))
    }

    /// The annotation this annotator gives for `lp`.
    pub fn annotate(&self, lp: &LabeledParagraph) -> Result<LabeledParagraph, AnnotatorError> {
        let id = lp.paragraph.id();
        let truth = self
            .truth
            .get(&id)
            .ok_or_else(|| AnnotatorError(format!("no truth for paragraph {id}")))?;
        let mut rng = self.rng_for(&id);
        let spans = perturb(&lp.tokens, truth, self.error_rate, &mut rng);
        Ok(lp.relabeled(spans, Provenance::Gold))
    }
}

impl Annotator for SimulatedAnnotator {
    fn verify(
        &mut self,
        _round: usize,
        silver: &[LabeledParagraph],
    ) -> Result<Vec<LabeledParagraph>, AnnotatorError> {
        silver.iter().map(|lp| self.annotate(lp)).collect()
    }
}

fn covered(spans: &[Span], tok: usize) -> bool {
    spans.iter().any(|s| s.token_start <= tok && tok <= s.token_end)
}

fn perturb(
    tokens: &[crate::corpus::Token],
    truth: &[Span],
    error_rate: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Span> {
    let n = tokens.len();
    let mut out: Vec<Span> = Vec::with_capacity(truth.len());
    let mut spurious = 0;
    for (i, s) in truth.iter().enumerate() {
        if !rng.random_bool(error_rate) {
            out.push(s.clone());
            continue;
        }
        match rng.random_range(0..3) {
            0 => {}
            1 => {
                let (a, b) = (s.token_start, s.token_end);
                let mut options = Vec::new();
                if a > 0 {
                    options.push((a - 1, b));
                }
                if b + 1 < n {
                    options.push((a, b + 1));
                }
                if b > a {
                    options.push((a + 1, b));
                    options.push((a, b - 1));
                }
                let others: Vec<&Span> = truth
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, o)| o)
                    .chain(out.iter())
                    .collect();
                options.retain(|&(x, y)| {
                    others
                        .iter()
                        .all(|o| y < o.token_start || x > o.token_end)
                });
                if !options.is_empty() {
                    let (x, y) = options[rng.random_range(0..options.len())];
                    out.push(Span::from_tokens_labeled(tokens, x, y, &s.label));
                }
            }
            _ => {
                out.push(s.clone());
                spurious += 1;
            }
        }
    }
    for _ in 0..spurious {
        let candidates: Vec<usize> = (0..n)
            .filter(|&t| {
                !covered(&out, t)
                    && !covered(truth, t)
                    && classify_token(&tokens[t].text) == TokenClass::Word
            })
            .collect();
        if candidates.is_empty() {
            break;
        }
        let t = candidates[rng.random_range(0..candidates.len())];
        out.push(Span::from_tokens(tokens, t, t));
    }
    out.sort_by_key(|s| s.token_start);
    debug_assert!(check_spans(tokens, &out).is_ok());
    out
}

/// Decides whether a paragraph's token confidences call for review.
pub trait SelectionPredicate {
    fn wants_review(&self, confidences: &[f64]) -> bool;
}

/// At least one token confidence in `[min, max]`, both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceBand {
    pub min: f64,
    pub max: f64,
}

impl ConfidenceBand {
    pub fn from_params(params: &LoopParams) -> Self {
        Self {
            min: params.conf_min,
            max: params.conf_max,
        }
    }
}

impl SelectionPredicate for ConfidenceBand {
    fn wants_review(&self, confidences: &[f64]) -> bool {
        confidences.iter().any(|&c| self.min <= c && c <= self.max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub paragraphs: Vec<LabeledParagraph>,
    pub requested: usize,
    pub shortfall: usize,
    /// The stream ran out before `requested` paragraphs qualified.
    pub exhausted: bool,
    pub examined: usize,
}

/// Pulls paragraphs until `count` satisfy `predicate`, labeling each
/// selected one with the model's decode.
pub fn select_with(
    model: &TaggerModel,
    stream: &mut CorpusStream,
    count: usize,
    predicate: &dyn SelectionPredicate,
) -> Selection {
    let mut paragraphs = Vec::with_capacity(count);
    let mut examined = 0;
    while paragraphs.len() < count {
        let Some(p) = stream.next_paragraph() else {
            break;
        };
        examined += 1;
        let tokens = crate::corpus::tokenize(&p.text);
        let analysis = model.analyze(&tokens);
        if !predicate.wants_review(&analysis.confidences) {
            continue;
        }
        let spans = iob_to_spans(&tokens, &analysis.labels)
            .expect("one label per token")
            .spans;
        paragraphs.push(LabeledParagraph {
            paragraph: p,
            tokens,
            spans,
            provenance: Provenance::SilverModel,
        });
    }
    Selection {
        requested: count,
        shortfall: count - paragraphs.len(),
        exhausted: paragraphs.len() < count,
        examined,
        paragraphs,
    }
}

pub fn select_uncertain(
    model: &TaggerModel,
    stream: &mut CorpusStream,
    count: usize,
    params: &LoopParams,
) -> Selection {
    select_with(model, stream, count, &ConfidenceBand::from_params(params))
}

/// Drives one run. Use [`Runner::resume`] to continue from a saved state.
pub struct Runner<'a> {
    lexicon: &'a Lexicon,
    annotator: &'a mut dyn Annotator,
    stream: CorpusStream,
    checkpoint: Option<PathBuf>,
    predicate: Box<dyn SelectionPredicate + 'a>,
    state: LoopState,
}

impl<'a> Runner<'a> {
    pub fn new(
        corpus: Arc<Corpus>,
        lexicon: &'a Lexicon,
        annotator: &'a mut dyn Annotator,
        config: RunConfig,
    ) -> Result<Self, LoopError> {
        config.params.validate()?;
        config.train.validate()?;
        let state = LoopState::new(config, corpus.len());
        Ok(Self::from_state(corpus, lexicon, annotator, state))
    }

    /// Continues `state`; the stream is rebuilt at the saved cursor.
    pub fn resume(
        corpus: Arc<Corpus>,
        lexicon: &'a Lexicon,
        annotator: &'a mut dyn Annotator,
        state: LoopState,
    ) -> Result<Self, LoopError> {
        if state.corpus_paragraphs != corpus.len() {
            return Err(LoopError::StateMismatch(format!(
                "state was built on {} paragraphs, corpus has {}",
                state.corpus_paragraphs,
                corpus.len()
            )));
        }
        Ok(Self::from_state(corpus, lexicon, annotator, state))
    }

    fn from_state(
        corpus: Arc<Corpus>,
        lexicon: &'a Lexicon,
        annotator: &'a mut dyn Annotator,
        state: LoopState,
    ) -> Self {
        let stream = CorpusStream::with_cursor(corpus, state.config.stream_seed, state.cursor);
        let predicate = Box::new(ConfidenceBand::from_params(&state.config.params));
        Self {
            lexicon,
            annotator,
            stream,
            checkpoint: None,
            predicate,
            state,
        }
    }

    /// Saves the state to `path` after every annotator round.
    pub fn with_checkpoint(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint = Some(path.into());
        self
    }

    pub fn with_predicate(mut self, predicate: Box<dyn SelectionPredicate + 'a>) -> Self {
        self.predicate = predicate;
        self
    }

    pub fn state(&self) -> &LoopState {
        &self.state
    }

    pub fn into_state(self) -> LoopState {
        self.state
    }

    fn params(&self) -> &LoopParams {
        &self.state.config.params
    }

    fn checkpoint(&mut self) -> Result<(), LoopError> {
        self.state.cursor = self.stream.cursor();
        if let Some(path) = &self.checkpoint {
            self.state.save(path)?;
        }
        Ok(())
    }

    fn trainer(&self) -> Trainer {
        let cfg = &self.state.config;
        let mut train = cfg.train.clone();
        train.seed = train.seed.wrapping_add(self.state.round as u64);
        let lexicon = cfg.features.uses_lexicon().then(|| self.lexicon.clone());
        Trainer::new(train, cfg.features.clone()).with_lexicon(lexicon)
    }

    /// Runs one annotator round and validates its answer.
    fn verify(&mut self, silver: &[LabeledParagraph]) -> Result<Vec<LabeledParagraph>, LoopError> {
        let round = self.state.round;
        let gold = self
            .annotator
            .verify(round, silver)
            .map_err(|e| LoopError::Annotator {
                round,
                message: e.0,
            })?;
        let invalid = |message: String| LoopError::InvalidAnnotation { round, message };
        if gold.len() != silver.len() {
            return Err(invalid(format!(
                "expected {} paragraphs, got {}",
                silver.len(),
                gold.len()
            )));
        }
        let mut out = Vec::with_capacity(gold.len());
        for (s, g) in silver.iter().zip(gold) {
            if g.paragraph != s.paragraph || g.tokens != s.tokens {
                return Err(invalid(format!("paragraph {} was altered", s.paragraph.id())));
            }
            check_spans(&g.tokens, &g.spans).map_err(|e| invalid(e.to_string()))?;
            out.push(LabeledParagraph {
                provenance: Provenance::Gold,
                ..g
            });
        }
        self.state.round += 1;
        Ok(out)
    }

    fn record(&mut self, phase: Phase, requested: usize, received: usize, examined: usize) {
        self.state.rounds.push(RoundRecord {
            round: self.state.round - 1,
            phase,
            requested,
            received,
            examined,
        });
    }

    /// Phase A.
    pub fn run_bootstrap(&mut self) -> Result<(), LoopError> {
        if self.state.phase != Phase::A {
            return Ok(());
        }
        let n0 = self.params().n0;
        let mut silver = Vec::with_capacity(n0);
        let mut examined = 0;
        while silver.len() < n0 {
            let Some(p) = self.stream.next_paragraph() else {
                break;
            };
            examined += 1;
            let lp = auto_label(&p, self.lexicon);
            if !lp.spans.is_empty() {
                silver.push(lp);
            }
        }
        if silver.is_empty() {
            return Err(LoopError::EmptyBootstrap);
        }
        if silver.len() < n0 {
            log::warn!("bootstrap found {} of {} lexicon-matching paragraphs", silver.len(), n0);
            self.state.exhausted.bootstrap = true;
        }
        let gold = self.verify(&silver)?;
        self.record(Phase::A, n0, gold.len(), examined);
        self.state.bootstrap = gold;
        self.state.phase = Phase::B;
        log::info!("bootstrap: {} verified paragraphs", self.state.bootstrap.len());
        self.checkpoint()
    }

    /// Phase B.
    pub fn run_build_test_set(&mut self) -> Result<(), LoopError> {
        if self.state.phase != Phase::B {
            return Ok(());
        }
        let (n, nt) = (self.params().n, self.params().nt);
        while self.state.bootstrap.len() < nt && !self.state.exhausted.test_set {
            let b = &self.state.bootstrap;
            let split = ((b.len() as f64 * 0.6).floor() as usize).clamp(1, b.len());
            let (train, valid) = b.split_at(split);
            let model = self.trainer().train(train, Some(valid))?;
            let counts = evaluate_model(&model, valid);
            self.state.phase_b_scores.push(RoundScore {
                round: self.state.round,
                f1: prf1(counts).f1,
                counts,
            });
            self.state.last_train_len = split;

            let sel = select_with(&model, &mut self.stream, n, self.predicate.as_ref());
            if sel.exhausted {
                log::warn!("stream exhausted in phase B, shortfall {}", sel.shortfall);
                self.state.exhausted.test_set = true;
            }
            if !sel.paragraphs.is_empty() {
                let gold = self.verify(&sel.paragraphs)?;
                self.record(Phase::B, n, gold.len(), sel.examined);
                self.state.bootstrap.extend(gold);
            }
            log::info!("phase B: {} verified paragraphs", self.state.bootstrap.len());
            self.checkpoint()?;
        }
        let b = &self.state.bootstrap;
        let cut = nt.min(b.len());
        self.state.test = b[..cut].to_vec();
        self.state.gold = b[cut..].to_vec();
        self.state.test_hash = Some(dataset_hash(&self.state.test));
        self.state.phase = Phase::C;
        log::info!(
            "test set fixed at {} paragraphs, labeled set starts at {}",
            self.state.test.len(),
            self.state.gold.len()
        );
        self.checkpoint()
    }

    /// Phase C.
    pub fn run_build_labeled_set(&mut self) -> Result<(), LoopError> {
        if self.state.phase != Phase::C {
            return Ok(());
        }
        let (n, epsilon) = (self.params().n, self.params().epsilon);
        loop {
            if self.state.test_hash.as_deref() != Some(dataset_hash(&self.state.test).as_str()) {
                return Err(LoopError::TestSetMutated);
            }
            let guard = self.state.gold.is_empty();
            let model = if guard {
                let split = self.state.last_train_len.min(self.state.bootstrap.len());
                self.trainer().train(&self.state.bootstrap[..split.max(1)], None)?
            } else {
                self.trainer().train(&self.state.gold, None)?
            };
            if guard {
                self.state.guard_rounds += 1;
                log::info!("labeled set is empty; selecting with the last phase-B model");
            } else {
                let counts = evaluate_model(&model, &self.state.test);
                let f1 = prf1(counts).f1;
                let previous = self.state.final_f1();
                self.state.f1_history.push(RoundScore {
                    round: self.state.round,
                    f1,
                    counts,
                });
                log::info!("phase C: |G| = {}, F1 on T = {:.4}", self.state.gold.len(), f1);
                if previous.is_some_and(|p| f1 - p <= epsilon) {
                    self.state.stop_reason = Some(StopReason::NoImprovement);
                    break;
                }
            }
            let sel = select_with(&model, &mut self.stream, n, self.predicate.as_ref());
            if sel.paragraphs.is_empty() {
                self.state.exhausted.labeled_set = true;
                self.state.stop_reason = Some(StopReason::StreamExhausted);
                break;
            }
            if sel.exhausted {
                self.state.exhausted.labeled_set = true;
            }
            let gold = self.verify(&sel.paragraphs)?;
            self.record(Phase::C, n, gold.len(), sel.examined);
            self.state.gold.extend(gold);
            self.checkpoint()?;
        }
        self.state.phase = Phase::Done;
        self.checkpoint()
    }

    /// Runs every remaining phase.
    pub fn run(&mut self) -> Result<(), LoopError> {
        self.run_bootstrap()?;
        self.run_build_test_set()?;
        self.run_build_labeled_set()
    }
}

/// Runs the workflow to completion. With a checkpoint path, an existing
/// state file there is resumed (it must have been written with the same
/// config) and the state is saved after every annotator round.
pub fn run_workflow(
    corpus: Arc<Corpus>,
    lexicon: &Lexicon,
    annotator: &mut dyn Annotator,
    config: RunConfig,
    checkpoint: Option<&Path>,
) -> Result<LoopState, LoopError> {
    let mut runner = match checkpoint {
        Some(path) if path.exists() => {
            let state = LoopState::load(path)?;
            if state.config != config {
                return Err(LoopError::StateMismatch(
                    "saved run used a different configuration".into(),
                ));
            }
            Runner::resume(corpus, lexicon, annotator, state)?
        }
        _ => Runner::new(corpus, lexicon, annotator, config)?,
    };
    if let Some(path) = checkpoint {
        runner = runner.with_checkpoint(path);
    }
    runner.run()?;
    Ok(runner.into_state())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, Paragraph};

    #[test]
    fn params_defaults_and_validation() {
        let p = LoopParams::default();
        assert_eq!((p.n0, p.n, p.nt), (278, 120, 500));
        assert_eq!((p.epsilon, p.conf_min, p.conf_max), (0.0, 0.45, 0.55));
        assert!(p.validate().is_ok());
        let bad = LoopParams {
            conf_min: 0.6,
            ..p.clone()
        };
        assert!(bad.validate().is_err());
        assert!(LoopParams { nt: 0, ..p }.validate().is_err());
    }

    #[test]
    fn band_is_inclusive() {
        let band = ConfidenceBand { min: 0.45, max: 0.55 };
        assert!(band.wants_review(&[0.1, 0.5, 0.9]));
        assert!(band.wants_review(&[0.45]));
        assert!(band.wants_review(&[0.55]));
        assert!(!band.wants_review(&[0.44, 0.56, 0.0, 1.0]));
    }

    #[test]
    fn zero_error_annotator_returns_truth() {
        let p = Paragraph::new("d", 0, "Patients received ribavirin daily");
        let tokens = tokenize(&p.text);
        let truth = vec![Span::from_tokens(&tokens, 2, 2)];
        let map = [(p.id(), truth.clone())].into_iter().collect();
        let mut ann = SimulatedAnnotator::new(map, 0.0, 1).unwrap();
        let silver = LabeledParagraph::unlabeled(p, Provenance::SilverModel);
        let gold = ann.verify(0, &[silver]).unwrap();
        assert_eq!(gold[0].spans, truth);
        assert_eq!(gold[0].provenance, Provenance::Gold);
        assert!(SimulatedAnnotator::new(HashMap::new(), 1.5, 0).is_err());
    }

    #[test]
    fn perturbation_keeps_spans_valid() {
        let text = "a ribavirin b c arbidol d e f sofosbuvir g";
        let tokens = tokenize(text);
        let truth = vec![
            Span::from_tokens(&tokens, 1, 1),
            Span::from_tokens(&tokens, 4, 4),
            Span::from_tokens(&tokens, 8, 8),
        ];
        let mut changed = 0;
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = perturb(&tokens, &truth, 1.0, &mut rng);
            check_spans(&tokens, &out).unwrap();
            changed += usize::from(out != truth);
        }
        assert_eq!(changed, 200);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(perturb(&tokens, &truth, 0.0, &mut rng), truth);
    }

    #[test]
    fn state_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.json");
        let mut state = LoopState::new(RunConfig::default(), 10);
        state.f1_history.push(RoundScore {
            round: 3,
            f1: 0.1 + 0.2,
            counts: EvalCounts::new(1, 2, 3),
        });
        state.save(&path).unwrap();
        assert_eq!(LoopState::load(&path).unwrap(), state);
    }
}

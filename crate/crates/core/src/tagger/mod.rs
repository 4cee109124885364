//! Trainable sequence tagger: a feature-based linear-chain CRF with
//! Viterbi decoding and forward-backward token confidences.
//!
//! Checkpoints are JSON documents:
//!
//! ```text
//! {"format": "nerloop-tagger", "version": 1, "labels": ["O","B","I"],
//!  "feature_config": {...}, "features": ["bias", "w=...", ...],
//!  "params": {"num_features": N, "emission": [...], "transition": [[...]],
//!             "start": [...], "end": [...]},
//!  "lexicon": {...} | null, "training_meta": {...}}
//! ```
//!
//! Feature ids are positions in `features`; weights round-trip exactly.

pub mod crf;
pub mod features;
mod train;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotations::{iob_to_spans, AnnotationError, Iob, IobSequence, LabeledParagraph, Provenance};
use crate::corpus::{tokenize, Paragraph, Token};
use crate::lexicon::Lexicon;

pub use crf::CrfParams;
pub use features::{extract_features, FeatureConfig, FeatureTable, Template};
pub use train::{TrainConfig, Trainer};

pub const CHECKPOINT_FORMAT: &str = "nerloop-tagger";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum TaggerError {
    #[error("no training data")]
    EmptyData,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub train_size: usize,
    pub validation_size: usize,
    /// Mean training NLL per paragraph, measured after each epoch.
    pub train_loss: Vec<f64>,
    /// Mean validation NLL per paragraph after each epoch.
    pub validation_loss: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerModel {
    pub feature_config: FeatureConfig,
    pub features: FeatureTable,
    pub params: CrfParams,
    pub lexicon: Option<Lexicon>,
    pub training_meta: TrainingMeta,
}

/// Decoded labels and per-token entity confidences of one token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub labels: IobSequence,
    pub confidences: Vec<f64>,
}

impl TaggerModel {
    /// An untrained model: empty feature table, all weights zero.
    pub fn untrained(feature_config: FeatureConfig, lexicon: Option<Lexicon>) -> Self {
        Self {
            feature_config,
            features: FeatureTable::default(),
            params: CrfParams::zeros(0),
            lexicon,
            training_meta: TrainingMeta::default(),
        }
    }

    pub fn encode(&self, tokens: &[Token]) -> Vec<Vec<u32>> {
        let strings = extract_features(tokens, self.lexicon.as_ref(), &self.feature_config);
        self.features.lookup_all(&strings)
    }

    /// Viterbi labels restricted to valid IOB sequences.
    pub fn decode(&self, tokens: &[Token]) -> IobSequence {
        self.decode_encoded(&self.encode(tokens))
    }

    fn decode_encoded(&self, feats: &[Vec<u32>]) -> IobSequence {
        self.params
            .viterbi(feats)
            .into_iter()
            .map(Iob::from_index)
            .collect()
    }

    /// Forward-backward marginals per token, in label order O, B, I.
    pub fn marginals(&self, tokens: &[Token]) -> Vec<[f64; 3]> {
        self.params.marginals(&self.encode(tokens))
    }

    /// Probability that each token belongs to an entity: `P(B) + P(I)`.
    pub fn confidences(&self, tokens: &[Token]) -> Vec<f64> {
        entity_confidences(&self.marginals(tokens))
    }

    /// Decode and confidences from one feature extraction.
    pub fn analyze(&self, tokens: &[Token]) -> Analysis {
        let feats = self.encode(tokens);
        Analysis {
            labels: self.decode_encoded(&feats),
            confidences: entity_confidences(&self.params.marginals(&feats)),
        }
    }

    /// Labels a paragraph with decoded spans (provenance `SilverModel`).
    pub fn predict(&self, paragraph: &Paragraph) -> LabeledParagraph {
        let tokens = tokenize(&paragraph.text);
        self.predict_tokens(paragraph.clone(), tokens)
    }

    pub fn predict_tokens(&self, paragraph: Paragraph, tokens: Vec<Token>) -> LabeledParagraph {
        let labels = self.decode(&tokens);
        let spans = iob_to_spans(&tokens, &labels)
            .expect("decode emits one label per token")
            .spans;
        LabeledParagraph {
            paragraph,
            tokens,
            spans,
            provenance: Provenance::SilverModel,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TaggerError> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<(), TaggerError> {
        let doc = CheckpointRef {
            format: CHECKPOINT_FORMAT,
            version: CHECKPOINT_VERSION,
            labels: ["O", "B", "I"],
            model: self,
        };
        serde_json::to_writer(out, &doc).map_err(|e| TaggerError::Format(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaggerError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn read_from<R: std::io::Read>(reader: R) -> Result<Self, TaggerError> {
        let doc: Checkpoint =
            serde_json::from_reader(reader).map_err(|e| TaggerError::Format(e.to_string()))?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(TaggerError::Format(format!("unknown format {:?}", doc.format)));
        }
        if doc.version != CHECKPOINT_VERSION {
            return Err(TaggerError::Format(format!(
                "unsupported checkpoint version {}",
                doc.version
            )));
        }
        if doc.labels != ["O", "B", "I"] {
            return Err(TaggerError::Format(format!("unexpected labels {:?}", doc.labels)));
        }
        let model = doc.model;
        if model.params.num_features != model.features.len()
            || model.params.emission.len() != model.features.len() * crf::NUM_LABELS
        {
            return Err(TaggerError::Format("feature table and weights disagree".into()));
        }
        if !model.params.is_finite() {
            return Err(TaggerError::Format("non-finite weights".into()));
        }
        Ok(model)
    }
}

pub fn entity_confidences(marginals: &[[f64; 3]]) -> Vec<f64> {
    marginals
        .iter()
        .map(|m| (m[Iob::B.index()] + m[Iob::I.index()]).clamp(0.0, 1.0))
        .collect()
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    format: &'a str,
    version: u32,
    labels: [&'a str; 3],
    #[serde(flatten)]
    model: &'a TaggerModel,
}

#[derive(Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    labels: Vec<String>,
    #[serde(flatten)]
    model: TaggerModel,
}

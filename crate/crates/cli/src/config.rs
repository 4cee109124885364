//! Settings resolution: command-line flag, then `NERLOOP_*` variable (both
//! handled by clap), then the TOML config file, then built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use nerloop_core::lexicon::CodeFilter;
use nerloop_core::tagger::{FeatureConfig, TrainConfig};
use nerloop_core::workflow::{LoopParams, RunConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    /// Every template, including the lexicon flag.
    Full,
    /// No lexicon flag and a narrower context window.
    Reduced,
}

impl FeatureSet {
    pub fn config(self) -> FeatureConfig {
        match self {
            FeatureSet::Full => FeatureConfig::full(),
            FeatureSet::Reduced => FeatureConfig::reduced(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotatorKind {
    /// Answers from a truth file with injected errors.
    Simulated,
    /// Waits for human reviewers on the HTTP review queue.
    Service,
}

/// `any`, `has-code` or `prefix:<CODE>`.
pub fn parse_filter(s: &str) -> Result<CodeFilter, String> {
    match s {
        "any" => Ok(CodeFilter::Any),
        "has-code" => Ok(CodeFilter::HasCode),
        _ => match s.strip_prefix("prefix:") {
            Some(p) if !p.is_empty() => Ok(CodeFilter::CodePrefix(p.to_string())),
            _ => Err(format!("expected any, has-code or prefix:<CODE>, got {s:?}")),
        },
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileParams {
    pub n0: Option<usize>,
    pub n: Option<usize>,
    pub nt: Option<usize>,
    pub epsilon: Option<f64>,
    pub conf_min: Option<f64>,
    pub conf_max: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileTrain {
    pub max_epochs: Option<usize>,
    pub l2: Option<f64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub validation_split: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileAnnotator {
    pub kind: Option<AnnotatorKind>,
    pub truth: Option<PathBuf>,
    pub error_rate: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileService {
    pub bind: Option<String>,
    pub journal: Option<PathBuf>,
    pub lease_minutes: Option<u64>,
}

/// The TOML config file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub corpus: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub lexicon_filter: Option<String>,
    pub state: Option<PathBuf>,
    pub stream_seed: Option<u64>,
    pub features: Option<FeatureSet>,
    pub params: FileParams,
    pub train: FileTrain,
    pub annotator: FileAnnotator,
    pub service: FileService,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct LoopArgs {
    /// Bootstrap paragraphs [default: 278]
    #[arg(long, env = "NERLOOP_N0")]
    pub n0: Option<usize>,
    /// Paragraphs per later round [default: 120]
    #[arg(long, env = "NERLOOP_N")]
    pub n: Option<usize>,
    /// Test set size [default: 500]
    #[arg(long, env = "NERLOOP_NT")]
    pub nt: Option<usize>,
    /// Minimum F1 gain to keep going [default: 0]
    #[arg(long, env = "NERLOOP_EPSILON", allow_negative_numbers = true)]
    pub epsilon: Option<f64>,
    /// Lower end of the review band [default: 0.45]
    #[arg(long, env = "NERLOOP_CONF_MIN")]
    pub conf_min: Option<f64>,
    /// Upper end of the review band [default: 0.55]
    #[arg(long, env = "NERLOOP_CONF_MAX")]
    pub conf_max: Option<f64>,
    /// Corpus shuffle seed [default: 42]
    #[arg(long, env = "NERLOOP_STREAM_SEED")]
    pub stream_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// [default: 64]
    #[arg(long, env = "NERLOOP_MAX_EPOCHS")]
    pub max_epochs: Option<usize>,
    /// [default: 0.001]
    #[arg(long, env = "NERLOOP_L2")]
    pub l2: Option<f64>,
    /// [default: 0.1]
    #[arg(long, env = "NERLOOP_LEARNING_RATE")]
    pub learning_rate: Option<f64>,
    /// [default: 8]
    #[arg(long, env = "NERLOOP_BATCH_SIZE")]
    pub batch_size: Option<usize>,
    /// [default: 0]
    #[arg(long, env = "NERLOOP_TRAIN_SEED")]
    pub train_seed: Option<u64>,
    /// Held-out share when no validation set is given [default: 0.1]
    #[arg(long, env = "NERLOOP_VALIDATION_SPLIT")]
    pub validation_split: Option<f64>,
    /// [default: full]
    #[arg(long, value_enum, env = "NERLOOP_FEATURES")]
    pub features: Option<FeatureSet>,
}

impl TrainArgs {
    pub fn resolve(&self, file: &FileConfig) -> (TrainConfig, FeatureConfig) {
        let d = TrainConfig::default();
        let f = &file.train;
        let train = TrainConfig {
            max_epochs: self.max_epochs.or(f.max_epochs).unwrap_or(d.max_epochs),
            l2: self.l2.or(f.l2).unwrap_or(d.l2),
            learning_rate: self.learning_rate.or(f.learning_rate).unwrap_or(d.learning_rate),
            batch_size: self.batch_size.or(f.batch_size).unwrap_or(d.batch_size),
            seed: self.train_seed.or(f.seed).unwrap_or(d.seed),
            validation_split: self
                .validation_split
                .or(f.validation_split)
                .unwrap_or(d.validation_split),
        };
        let features = self
            .features
            .or(file.features)
            .unwrap_or(FeatureSet::Full)
            .config();
        (train, features)
    }
}

pub fn run_config(lp: &LoopArgs, tr: &TrainArgs, file: &FileConfig) -> RunConfig {
    let d = LoopParams::default();
    let f = &file.params;
    let params = LoopParams {
        n0: lp.n0.or(f.n0).unwrap_or(d.n0),
        n: lp.n.or(f.n).unwrap_or(d.n),
        nt: lp.nt.or(f.nt).unwrap_or(d.nt),
        epsilon: lp.epsilon.or(f.epsilon).unwrap_or(d.epsilon),
        conf_min: lp.conf_min.or(f.conf_min).unwrap_or(d.conf_min),
        conf_max: lp.conf_max.or(f.conf_max).unwrap_or(d.conf_max),
    };
    let (train, features) = tr.resolve(file);
    RunConfig {
        params,
        stream_seed: lp
            .stream_seed
            .or(file.stream_seed)
            .unwrap_or(RunConfig::default().stream_seed),
        train,
        features,
    }
}

/// First of `flag` and `file`, or an error naming the missing setting.
pub fn required<T: Clone>(flag: &Option<T>, file: &Option<T>, name: &str) -> anyhow::Result<T> {
    flag.clone()
        .or_else(|| file.clone())
        .with_context(|| format!("missing --{name} (or `{name}` in the config file)"))
}

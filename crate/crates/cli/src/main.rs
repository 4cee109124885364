//! `nerloop`: build a labeled NER dataset with a model in the loop, then
//! train, evaluate and run the resulting taggers over a corpus.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

use config::{AnnotatorKind, LoopArgs, TrainArgs};

#[derive(Debug, Parser)]
#[command(name = "nerloop", version, about)]
struct Cli {
    /// TOML config file. Flags and NERLOOP_* variables override it.
    #[arg(long, global = true, env = "NERLOOP_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run (or resume) the three-phase annotation loop.
    Run(RunArgs),
    /// Train a tagger on a JSONL dataset.
    Train(TrainCmd),
    /// Score a tagger on gold data, or cross-validate.
    Eval(EvalArgs),
    /// Count context tokens around predicted entities.
    Analyze(AnalyzeArgs),
    /// Tag a corpus with two models and tally the entities.
    Extract(ExtractArgs),
    /// Compare an extraction report against a reference term list.
    Compare(CompareArgs),
    /// Convert datasets, or pull datasets out of a run state.
    Export(ExportArgs),
    /// Serve the review queue over HTTP.
    Serve(ServeArgs),
    /// Term list utilities.
    Lexicon {
        #[command(subcommand)]
        command: LexiconCommand,
    },
    /// Write a synthetic corpus, lexicon and truth file.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Corpus JSONL (`doc_id`, `paragraphs`).
    #[arg(long, env = "NERLOOP_CORPUS")]
    corpus: Option<PathBuf>,
    /// Term CSV (`name`, `aliases`, `code`).
    #[arg(long, env = "NERLOOP_LEXICON")]
    lexicon: Option<PathBuf>,
    /// any, has-code or prefix:<CODE> [default: any]
    #[arg(long, env = "NERLOOP_LEXICON_FILTER")]
    lexicon_filter: Option<String>,
    /// Run state file. An existing one is resumed.
    #[arg(long, env = "NERLOOP_STATE")]
    state: Option<PathBuf>,
    /// [default: simulated]
    #[arg(long, value_enum, env = "NERLOOP_ANNOTATOR")]
    annotator: Option<AnnotatorKind>,
    /// Truth JSONL for the simulated annotator.
    #[arg(long, env = "NERLOOP_TRUTH")]
    truth: Option<PathBuf>,
    /// Per-entity error probability of the simulated annotator [default: 0.2]
    #[arg(long, env = "NERLOOP_ERROR_RATE")]
    error_rate: Option<f64>,
    /// [default: 0]
    #[arg(long, env = "NERLOOP_ANNOTATOR_SEED")]
    annotator_seed: Option<u64>,
    #[command(flatten)]
    service: ServiceArgs,
    #[command(flatten)]
    params: LoopArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Debug, Clone, Default, Args)]
struct ServiceArgs {
    /// Review queue address [default: 127.0.0.1:8080]
    #[arg(long, env = "NERLOOP_BIND")]
    bind: Option<String>,
    /// Review event journal [default: review-events.jsonl]
    #[arg(long, env = "NERLOOP_JOURNAL")]
    journal: Option<PathBuf>,
    /// Lease timeout [default: 15]
    #[arg(long, env = "NERLOOP_LEASE_MINUTES")]
    lease_minutes: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainCmd {
    /// Training JSONL.
    #[arg(long = "in")]
    input: PathBuf,
    /// Model checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Validation JSONL. Without it a share of the training data is held out.
    #[arg(long)]
    validation: Option<PathBuf>,
    /// Term CSV for the lexicon feature.
    #[arg(long, env = "NERLOOP_LEXICON")]
    lexicon: Option<PathBuf>,
    #[arg(long, env = "NERLOOP_LEXICON_FILTER")]
    lexicon_filter: Option<String>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Gold JSONL.
    #[arg(long)]
    gold: PathBuf,
    /// Model to score. Not used with --kfold.
    #[arg(long, required_unless_present = "kfold")]
    model: Option<PathBuf>,
    /// Cross-validate with this many contiguous folds.
    #[arg(long, requires = "train_set")]
    kfold: Option<usize>,
    /// Training labels for --kfold, aligned with --gold.
    #[arg(long = "train-set")]
    train_set: Option<PathBuf>,
    #[arg(long, env = "NERLOOP_LEXICON")]
    lexicon: Option<PathBuf>,
    #[arg(long, env = "NERLOOP_LEXICON_FILTER")]
    lexicon_filter: Option<String>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScopeArg {
    Incorrect,
    Correct,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    /// Tokens counted on each side of an entity.
    #[arg(long, default_value_t = 3)]
    window: usize,
    /// Count stopwords and punctuation too.
    #[arg(long)]
    keep_stopwords: bool,
    #[arg(long, value_enum, default_value = "incorrect")]
    scope: ScopeArg,
    /// Rows to print.
    #[arg(long, default_value_t = 20)]
    top: usize,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long, env = "NERLOOP_CORPUS")]
    corpus: PathBuf,
    #[arg(long)]
    model_a: PathBuf,
    #[arg(long)]
    model_b: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Report TSV to write. Printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PoolArg {
    All,
    Balanced,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Report TSV from `extract`.
    #[arg(long)]
    report: PathBuf,
    /// Reference term CSV.
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long, default_value = "any")]
    ref_filter: String,
    #[arg(long, default_value_t = 100)]
    top_k: usize,
    #[arg(long, value_enum, default_value = "balanced")]
    pool: PoolArg,
    /// Also list the entities that match nothing.
    #[arg(long)]
    show_unmatched: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SetArg {
    Bootstrap,
    Test,
    Labeled,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Jsonl,
    Csv,
}

#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false)]
struct ExportSource {
    /// JSONL dataset.
    #[arg(long = "in", group = "source")]
    input: Option<PathBuf>,
    /// Run state file.
    #[arg(long, group = "source")]
    state: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    source: ExportSource,
    /// Which set of a run state to export.
    #[arg(long, value_enum, default_value = "labeled")]
    set: SetArg,
    #[arg(long)]
    out: PathBuf,
    /// Output format [default: from the --out extension]
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    service: ServiceArgs,
}

#[derive(Debug, Subcommand)]
enum LexiconCommand {
    /// Load and normalize a term file.
    Load {
        #[arg(long)]
        terms: PathBuf,
        /// any, has-code or prefix:<CODE>
        #[arg(long, default_value = "any")]
        filter: String,
        /// Write the normalized terms here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5000)]
    paragraphs: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(e) = commands::dispatch(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

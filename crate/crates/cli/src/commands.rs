use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use nerloop_core::annotations::{export_iob_csv, read_dataset, write_dataset, LabeledParagraph};
use nerloop_core::corpus::Corpus;
use nerloop_core::eval::{context_frequencies, evaluate_model, kfold_run, prf1, ContextScope};
use nerloop_core::extract::{compare_reference, extract_corpus, unmatched, ExtractionReport, Pool};
use nerloop_core::lexicon::{CodeFilter, Lexicon};
use nerloop_core::synth::{SynthConfig, SynthCorpus};
use nerloop_core::tagger::{TaggerModel, Trainer};
use nerloop_core::workflow::{run_workflow, Annotator, LoopState, SimulatedAnnotator};
use nerloop_service::{ReviewService, ServiceAnnotator, DEFAULT_LEASE_TTL};

use crate::config::{self, parse_filter, AnnotatorKind, FileConfig};
use crate::{
    AnalyzeArgs, Cli, Command, CompareArgs, EvalArgs, ExportArgs, ExtractArgs, FormatArg,
    LexiconCommand, PoolArg, RunArgs, ScopeArg, ServiceArgs, SetArg, SynthArgs, TrainCmd,
};

pub fn dispatch(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Run(a) => run(a, &file),
        Command::Train(a) => train(a, &file),
        Command::Eval(a) => eval(a, &file),
        Command::Analyze(a) => analyze(a),
        Command::Extract(a) => extract(a),
        Command::Compare(a) => compare(a),
        Command::Export(a) => export(a),
        Command::Serve(a) => serve(a.service, &file),
        Command::Lexicon {
            command: LexiconCommand::Load { terms, filter, out },
        } => lexicon_load(&terms, &filter, out.as_deref()),
        Command::Synth(a) => synth(a),
    }
}

fn load_lexicon(path: &Path, filter: &CodeFilter) -> Result<Lexicon> {
    let (lex, report) =
        Lexicon::load(path, filter).with_context(|| format!("loading terms {}", path.display()))?;
    for (line, msg) in &report.malformed {
        log::warn!("{} line {line}: {msg}", path.display());
    }
    log::info!(
        "lexicon: {} terms kept of {} rows ({} filtered, {} duplicates)",
        report.kept,
        report.rows,
        report.filtered_out,
        report.duplicates
    );
    Ok(lex)
}

fn lexicon_filter(flag: &Option<String>, file: &FileConfig) -> Result<CodeFilter> {
    match flag.as_ref().or(file.lexicon_filter.as_ref()) {
        Some(s) => parse_filter(s).map_err(anyhow::Error::msg),
        None => Ok(CodeFilter::Any),
    }
}

fn optional_lexicon(
    path: &Option<PathBuf>,
    filter: &Option<String>,
    file: &FileConfig,
) -> Result<Option<Lexicon>> {
    match path.as_ref().or(file.lexicon.as_ref()) {
        Some(p) => Ok(Some(load_lexicon(p, &lexicon_filter(filter, file)?)?)),
        None => Ok(None),
    }
}

fn dataset(path: &Path) -> Result<Vec<LabeledParagraph>> {
    read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn model(path: &Path) -> Result<TaggerModel> {
    TaggerModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn trainer(args: &config::TrainArgs, file: &FileConfig, lexicon: Option<Lexicon>) -> Result<Trainer> {
    let (train, features) = args.resolve(file);
    train.validate()?;
    if features.uses_lexicon() && lexicon.is_none() {
        log::warn!("the full feature set without --lexicon leaves the lexicon feature unused");
    }
    Ok(Trainer::new(train, features).with_lexicon(lexicon))
}

struct ServiceSettings {
    bind: String,
    journal: PathBuf,
    lease: Duration,
}

fn service_settings(args: &ServiceArgs, file: &FileConfig) -> ServiceSettings {
    let f = &file.service;
    ServiceSettings {
        bind: args
            .bind
            .clone()
            .or_else(|| f.bind.clone())
            .unwrap_or_else(|| "127.0.0.1:8080".into()),
        journal: args
            .journal
            .clone()
            .or_else(|| f.journal.clone())
            .unwrap_or_else(|| "review-events.jsonl".into()),
        lease: args
            .lease_minutes
            .or(f.lease_minutes)
            .map(|m| Duration::from_secs(m * 60))
            .unwrap_or(DEFAULT_LEASE_TTL),
    }
}

/// Starts the HTTP review queue on a background runtime. Dropping the
/// runtime stops it.
fn start_service(s: &ServiceSettings) -> Result<(Arc<ReviewService>, tokio::runtime::Runtime)> {
    let svc = Arc::new(
        ReviewService::open(&s.journal)
            .with_context(|| format!("opening journal {}", s.journal.display()))?
            .with_lease_ttl(s.lease),
    );
    let listener =
        std::net::TcpListener::bind(&s.bind).with_context(|| format!("binding {}", s.bind))?;
    listener.set_nonblocking(true)?;
    let rt = tokio::runtime::Runtime::new()?;
    let listener = {
        let _guard = rt.enter();
        tokio::net::TcpListener::from_std(listener)?
    };
    let handle = svc.clone();
    rt.spawn(async move {
        if let Err(e) = nerloop_service::http::serve(listener, handle).await {
            log::error!("review service stopped: {e}");
        }
    });
    Ok((svc, rt))
}

fn run(a: RunArgs, file: &FileConfig) -> Result<()> {
    let cfg = config::run_config(&a.params, &a.train, file);
    if a.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    cfg.params.validate()?;
    cfg.train.validate()?;
    let corpus_path = config::required(&a.corpus, &file.corpus, "corpus")?;
    let lexicon_path = config::required(&a.lexicon, &file.lexicon, "lexicon")?;
    let state_path = config::required(&a.state, &file.state, "state")?;
    let corpus = Arc::new(
        Corpus::load(&corpus_path)
            .with_context(|| format!("loading corpus {}", corpus_path.display()))?,
    );
    let lexicon = load_lexicon(&lexicon_path, &lexicon_filter(&a.lexicon_filter, file)?)?;
    let fa = &file.annotator;
    let kind = a.annotator.or(fa.kind).unwrap_or(AnnotatorKind::Simulated);

    let mut _runtime = None;
    let mut annotator: Box<dyn Annotator> = match kind {
        AnnotatorKind::Simulated => {
            let truth = config::required(&a.truth, &fa.truth, "truth")?;
            let error_rate = a.error_rate.or(fa.error_rate).unwrap_or(0.2);
            let seed = a.annotator_seed.or(fa.seed).unwrap_or(0);
            Box::new(SimulatedAnnotator::from_dataset(&dataset(&truth)?, error_rate, seed)?)
        }
        AnnotatorKind::Service => {
            let settings = service_settings(&a.service, file);
            let (svc, rt) = start_service(&settings)?;
            _runtime = Some(rt);
            Box::new(ServiceAnnotator::new(svc))
        }
    };
    let state = run_workflow(corpus, &lexicon, annotator.as_mut(), cfg, Some(&state_path))?;
    print_summary(&state);
    Ok(())
}

fn print_summary(state: &LoopState) {
    println!("phase\t{:?}", state.phase);
    println!("rounds\t{}", state.round);
    println!("bootstrap\t{}", state.bootstrap.len());
    println!("test\t{}", state.test.len());
    println!("labeled\t{}", state.gold.len());
    let history: Vec<String> = state.f1_history.iter().map(|s| format!("{:.4}", s.f1)).collect();
    println!("f1_history\t{}", history.join(","));
    if let Some(f1) = state.final_f1() {
        println!("final_f1\t{f1:.4}");
    }
    if let Some(reason) = state.stop_reason {
        println!("stop_reason\t{reason:?}");
    }
}

fn train(a: TrainCmd, file: &FileConfig) -> Result<()> {
    let data = dataset(&a.input)?;
    let validation = a.validation.as_deref().map(dataset).transpose()?;
    let lexicon = optional_lexicon(&a.lexicon, &a.lexicon_filter, file)?;
    let model = trainer(&a.train, file, lexicon)?.train(&data, validation.as_deref())?;
    model
        .save(&a.out)
        .with_context(|| format!("writing model {}", a.out.display()))?;
    let meta = &model.training_meta;
    println!("paragraphs\t{}", data.len());
    println!("epochs\t{}", meta.train_loss.len());
    if let Some(loss) = meta.validation_loss.iter().copied().reduce(f64::min) {
        println!("best_validation_loss\t{loss:.6}");
    }
    Ok(())
}

fn eval(a: EvalArgs, file: &FileConfig) -> Result<()> {
    let gold = dataset(&a.gold)?;
    if let Some(k) = a.kfold {
        let train_path = a.train_set.as_deref().context("--kfold needs --train-set")?;
        let train_set = dataset(train_path)?;
        let lexicon = optional_lexicon(&a.lexicon, &a.lexicon_filter, file)?;
        let report = kfold_run(&train_set, &gold, k, &trainer(&a.train, file, lexicon)?)?;
        print!("{}", report.to_table());
        return Ok(());
    }
    let m = model(a.model.as_deref().context("--model is required")?)?;
    let counts = evaluate_model(&m, &gold);
    let metrics = prf1(counts);
    println!("precision\trecall\tf1\ttp\tfp\tfn");
    println!(
        "{:.1}\t{:.1}\t{:.1}\t{}\t{}\t{}",
        metrics.precision * 100.0,
        metrics.recall * 100.0,
        metrics.f1 * 100.0,
        counts.true_positives,
        counts.false_positives,
        counts.false_negatives
    );
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let m = model(&a.model)?;
    let gold = dataset(&a.gold)?;
    let data: Vec<_> = gold
        .into_iter()
        .map(|g| {
            let pred = m.predict_tokens(g.paragraph.clone(), g.tokens.clone()).spans;
            (g, pred)
        })
        .collect();
    let scope = match a.scope {
        ScopeArg::Incorrect => ContextScope::AroundIncorrect,
        ScopeArg::Correct => ContextScope::AroundCorrect,
    };
    let stats = context_frequencies(&data, a.window, a.keep_stopwords, scope)?;
    print!("{}", stats.to_table(a.top));
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<()> {
    let corpus =
        Corpus::load(&a.corpus).with_context(|| format!("loading corpus {}", a.corpus.display()))?;
    let (ma, mb) = (model(&a.model_a)?, model(&a.model_b)?);
    let report = extract_corpus(corpus.paragraphs(), &ma, &mb, a.workers)?;
    match &a.out {
        Some(path) => {
            report.write_tsv(path)?;
            println!(
                "entities\t{}\nbalanced\t{}",
                report.tallies.len(),
                report.balanced().count()
            );
        }
        None => print!("{}", report.to_tsv()),
    }
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let report = ExtractionReport::read_tsv(&a.report)?;
    let filter = parse_filter(&a.ref_filter).map_err(anyhow::Error::msg)?;
    let reference = load_lexicon(&a.reference, &filter)?;
    let pool = match a.pool {
        PoolArg::All => Pool::All,
        PoolArg::Balanced => Pool::Balanced,
    };
    let r = compare_reference(&report, &reference, a.top_k, pool);
    println!("pool\tconsidered\texact\tpartial\texact_rate\texact_plus_partial_rate");
    println!(
        "{pool:?}\t{}\t{}\t{}\t{:.2}\t{:.2}",
        r.considered, r.exact, r.partial, r.exact_rate, r.exact_plus_partial_rate
    );
    if a.show_unmatched {
        for s in unmatched(&report, &reference, a.top_k, pool) {
            println!("unmatched\t{s}");
        }
    }
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let data = match (&a.source.input, &a.source.state) {
        (Some(p), _) => dataset(p)?,
        (None, Some(p)) => {
            let state =
                LoopState::load(p).with_context(|| format!("loading state {}", p.display()))?;
            match a.set {
                SetArg::Bootstrap => state.bootstrap,
                SetArg::Test => state.test,
                SetArg::Labeled => state.gold,
            }
        }
        (None, None) => bail!("give --in or --state"),
    };
    let format = a.format.unwrap_or_else(|| {
        match a.out.extension().and_then(|e| e.to_str()) {
            Some("csv") => FormatArg::Csv,
            _ => FormatArg::Jsonl,
        }
    });
    match format {
        FormatArg::Jsonl => write_dataset(&data, &a.out)?,
        FormatArg::Csv => export_iob_csv(&data, &a.out)?,
    }
    println!("paragraphs\t{}", data.len());
    Ok(())
}

fn serve(args: ServiceArgs, file: &FileConfig) -> Result<()> {
    let settings = service_settings(&args, file);
    let svc = Arc::new(
        ReviewService::open(&settings.journal)?.with_lease_ttl(settings.lease),
    );
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&settings.bind)
            .await
            .with_context(|| format!("binding {}", settings.bind))?;
        nerloop_service::http::serve(listener, svc).await?;
        Ok(())
    })
}

fn lexicon_load(terms: &Path, filter: &str, out: Option<&Path>) -> Result<()> {
    let filter = parse_filter(filter).map_err(anyhow::Error::msg)?;
    let (lex, report) =
        Lexicon::load(terms, &filter).with_context(|| format!("loading terms {}", terms.display()))?;
    println!("rows\t{}", report.rows);
    println!("kept\t{}", report.kept);
    println!("filtered_out\t{}", report.filtered_out);
    println!("duplicates\t{}", report.duplicates);
    println!("malformed\t{}", report.malformed.len());
    println!("terms\t{}", lex.len());
    for (line, msg) in &report.malformed {
        eprintln!("line {line}: {msg}");
    }
    if let Some(out) = out {
        lex.write(out)?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let s = SynthCorpus::generate(&SynthConfig {
        paragraphs: a.paragraphs,
        seed: a.seed,
        ..SynthConfig::default()
    });
    s.write_dir(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    println!("paragraphs\t{}", s.corpus.len());
    println!("lexicon_terms\t{}", s.lexicon.len());
    println!("planted_drugs\t{}", s.mention_counts.len());
    Ok(())
}

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ivirs_core::corpus::{load_corpus, Analyzer, Collection, CorpusFormat};
use ivirs_core::dds::{Channel, Format, ProfileStore, UserProfile};
use ivirs_core::eval::{evaluate, format_report, format_run, parse_qrels, parse_run, Run};
use ivirs_core::experiments::{
    damage_experiment, merge_experiment, merge_rows_to_csv, merge_rows_to_table,
    recovery_experiment, summarize_damage, DamageConfig, MergeExperimentConfig, Workbench,
};
use ivirs_core::pirs::{rank, ConfidenceMode, RankingParams, WeightedQuery};
use ivirs_core::synth::{
    generate, parse_queries, qrels_to_tsv, queries_to_tsv, to_trec, DeskConfig,
};
use ivirs_core::vdm_sim::{
    derive_seed, spoken_query, transcribe_query, word_accuracy, ConfusionVocabulary, ErrorModel,
};
use ivirs_service::{AppState, ServiceConfig};

#[derive(Debug, Parser)]
#[command(
    name = "ivirs",
    version,
    about = "Interactive vocal information retrieval over a simulated recognizer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build an index from a corpus.
    Index(IndexArgs),
    /// Rank documents for one query or a query file.
    Search(SearchArgs),
    /// Score a run file against relevance judgements.
    Eval(EvalArgs),
    /// Generate the synthetic desk collection.
    Synth(SynthArgs),
    /// Simulate recognizers hearing an utterance.
    Transcribe(TranscribeArgs),
    /// Word accuracy and MAP of merged recognizers across accuracies.
    MergeExperiment(MergeArgs),
    /// Effect of a rare misrecognized word on retrieval.
    DamageExperiment(DamageArgs),
    /// How often feedback finds the word a recognizer missed.
    RecoveryExperiment(RecoveryArgs),
    /// Add or replace a user in a profile store.
    AddUser(AddUserArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct IndexArgs {
    /// TREC-style file or directory of plain documents.
    corpus: PathBuf,
    #[arg(long, default_value = "trec-sgml")]
    format: CorpusFormat,
    #[arg(short, long, default_value = "index.json")]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long)]
    index: PathBuf,
    /// A single query; prints the ranking.
    #[arg(long, conflicts_with = "queries")]
    query: Option<String>,
    /// `query_id TAB text` lines; prints a run file.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Keep at most this many documents per query.
    #[arg(long)]
    top: Option<usize>,
    /// Only documents scoring at least this much.
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    /// Pass queries through simulated recognizers of this accuracy first.
    #[arg(long)]
    accuracy: Option<f64>,
    #[arg(long, default_value_t = 1)]
    recognizers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Score without recognition confidences.
    #[arg(long)]
    ignore_confidence: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// `query_id TAB doc_id TAB rank` lines.
    run: PathBuf,
    /// `query_id TAB doc_id` lines.
    qrels: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Directory to write corpus.trec, queries.tsv and qrels.tsv into.
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = DeskConfig::default().documents)]
    documents: usize,
    #[arg(long, default_value_t = DeskConfig::default().topics)]
    topics: usize,
    #[arg(long, default_value_t = DeskConfig::default().seed)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TranscribeArgs {
    utterance: String,
    #[arg(long, default_value_t = 1)]
    recognizers: usize,
    #[arg(long, default_value_t = 0.8)]
    accuracy: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Index whose vocabulary the recognizers confuse words with.
    #[arg(long)]
    index: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DeskArgs {
    /// Directory holding corpus.trec, queries.tsv and qrels.tsv.
    #[arg(long)]
    desk: PathBuf,
}

#[derive(Debug, Args)]
struct MergeArgs {
    #[command(flatten)]
    desk: DeskArgs,
    #[arg(long, value_delimiter = ',', default_values_t = MergeExperimentConfig::default().accuracies)]
    accuracies: Vec<f64>,
    #[arg(long = "recognizers", value_delimiter = ',', default_values_t = MergeExperimentConfig::default().n_recognizers)]
    n_recognizers: Vec<usize>,
    #[arg(long, default_value_t = MergeExperimentConfig::default().trials)]
    trials: usize,
    #[arg(long, default_value_t = MergeExperimentConfig::default().seed)]
    seed: u64,
    /// Also write the rows as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DamageArgs {
    #[command(flatten)]
    desk: DeskArgs,
    #[arg(long, default_value_t = DamageConfig::default().trials)]
    trials: usize,
    #[arg(long, default_value_t = DamageConfig::default().seed)]
    seed: u64,
    /// Largest document frequency of a substituted word.
    #[arg(long, default_value_t = DamageConfig::default().max_df)]
    max_df: usize,
}

#[derive(Debug, Args)]
struct RecoveryArgs {
    #[command(flatten)]
    desk: DeskArgs,
    #[arg(long, default_value_t = 100)]
    scenarios: usize,
    #[arg(long, default_value_t = 11)]
    seed: u64,
}

#[derive(Debug, Args)]
struct AddUserArgs {
    #[arg(long)]
    profiles: PathBuf,
    #[arg(long)]
    user: String,
    #[arg(long)]
    pin: String,
    #[arg(long)]
    email: Option<String>,
    #[arg(long)]
    fax: Option<String>,
    #[arg(long)]
    postal: Option<String>,
    #[arg(long, default_value = "ascii")]
    format: Format,
    /// Score a document must reach to count as surely relevant.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(short, long, default_value = "ivirs.toml")]
    config: PathBuf,
    /// Overrides the configured listen address.
    #[arg(long)]
    listen: Option<String>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn load_index(path: &Path) -> Result<Collection> {
    Collection::load(path).with_context(|| format!("cannot load index {}", path.display()))
}

fn cmd_index(a: IndexArgs) -> Result<()> {
    let analyzer = Analyzer::default();
    let docs = load_corpus(&a.corpus, a.format, &analyzer)
        .with_context(|| format!("cannot index {}", a.corpus.display()))?;
    if docs.is_empty() {
        eprintln!("warning: {} contains no documents", a.corpus.display());
    }
    let c = Collection::build(docs, analyzer)?;
    c.save(&a.output)?;
    let ix = c.index();
    println!(
        "N={} vocabulary={} index={}",
        ix.doc_count(),
        ix.vocabulary_size(),
        a.output.display()
    );
    Ok(())
}

fn cmd_search(a: SearchArgs) -> Result<()> {
    let c = load_index(&a.index)?;
    let mut params = RankingParams::default();
    if a.ignore_confidence {
        params.confidence_mode = ConfidenceMode::Ignore;
    }
    let model = a
        .accuracy
        .map(|acc| {
            let m = ErrorModel::default().with_accuracy(acc);
            m.validate().map(|()| m)
        })
        .transpose()?;
    let vocab = ConfusionVocabulary::new(c.index().vocabulary().iter().cloned());
    let to_query = |text: &str, stream: u64| -> Result<WeightedQuery> {
        Ok(match &model {
            Some(m) => {
                let t =
                    transcribe_query(text, a.recognizers, m, &vocab, derive_seed(a.seed, stream))?;
                spoken_query(&t.merged, c.analyzer())
            }
            None => WeightedQuery::typed(text, c.analyzer()),
        })
    };
    let run_one = |q: &WeightedQuery| {
        let mut r = rank(q, c.index(), &params, a.threshold).entries;
        r.retain(|e| e.score >= a.threshold);
        if let Some(k) = a.top {
            r.truncate(k);
        }
        r
    };
    match (&a.query, &a.queries) {
        (Some(text), None) => {
            let q = to_query(text, 0)?;
            if model.is_some() {
                let heard: Vec<String> = q
                    .terms
                    .iter()
                    .map(|t| format!("{}({:.2})", t.surface, t.confidence))
                    .collect();
                println!("heard: {}", heard.join(" "));
            }
            for (i, e) in run_one(&q).iter().enumerate() {
                let title = c.document(&e.doc_id).map_or("", |d| d.title.as_str());
                println!("{:>3}  {:<10} {:>9.4}  {title}", i + 1, e.doc_id, e.score);
            }
        }
        (None, Some(path)) => {
            let queries = parse_queries(&read(path)?).map_err(anyhow::Error::msg)?;
            let mut run = Run::new();
            for (i, q) in queries.iter().enumerate() {
                let wq = to_query(&q.text, i as u64)?;
                run.insert(
                    q.query_id.clone(),
                    run_one(&wq).into_iter().map(|e| e.doc_id).collect(),
                );
            }
            print!("{}", format_run(&run));
        }
        _ => bail!("give either --query or --queries"),
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let run = parse_run(&read(&a.run)?).with_context(|| format!("in {}", a.run.display()))?;
    let qrels =
        parse_qrels(&read(&a.qrels)?).with_context(|| format!("in {}", a.qrels.display()))?;
    let report = evaluate(&run, &qrels);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", format_report(&report));
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cfg = DeskConfig {
        documents: a.documents,
        topics: a.topics,
        seed: a.seed,
        ..DeskConfig::default()
    };
    if cfg.topics == 0 || cfg.documents == 0 {
        bail!("need at least one document and one topic");
    }
    let desk = generate(&cfg, &Analyzer::default());
    fs::create_dir_all(&a.output)
        .with_context(|| format!("cannot create {}", a.output.display()))?;
    write(&a.output.join("corpus.trec"), &to_trec(&desk.documents))?;
    write(
        &a.output.join("queries.tsv"),
        &queries_to_tsv(&desk.queries),
    )?;
    write(&a.output.join("qrels.tsv"), &qrels_to_tsv(&desk.qrels))?;
    println!(
        "{} documents, {} queries written to {}",
        desk.documents.len(),
        desk.queries.len(),
        a.output.display()
    );
    Ok(())
}

fn cmd_transcribe(a: TranscribeArgs) -> Result<()> {
    let vocab = match &a.index {
        Some(p) => ConfusionVocabulary::new(load_index(p)?.index().vocabulary().iter().cloned()),
        None => ConfusionVocabulary::new(ivirs_core::vdm_sim::utterance_words(&a.utterance)),
    };
    let model = ErrorModel::default().with_accuracy(a.accuracy);
    let t = transcribe_query(&a.utterance, a.recognizers, &model, &vocab, a.seed)?;
    for tr in &t.transcripts {
        println!("# {}", tr.recognizer_id);
        print!("{}", tr.to_tsv());
    }
    println!("# merged");
    for w in &t.merged.words {
        println!(
            "{}\t{:.4}\t{:.2}",
            w.surface, w.combined_confidence, w.agreement
        );
    }
    let r = word_accuracy(&t.reference, &t.merged.surfaces())?;
    println!(
        "# wer {:.4} (S={} D={} I={})",
        r.wer, r.substitutions, r.deletions, r.insertions
    );
    Ok(())
}

fn load_desk(d: &DeskArgs) -> Result<Workbench> {
    Workbench::load_dir(&d.desk)
        .with_context(|| format!("cannot load desk collection {}", d.desk.display()))
}

fn cmd_merge(a: MergeArgs) -> Result<()> {
    let bench = load_desk(&a.desk)?;
    let cfg = MergeExperimentConfig {
        accuracies: a.accuracies,
        n_recognizers: a.n_recognizers,
        trials: a.trials,
        seed: a.seed,
        ..MergeExperimentConfig::default()
    };
    let rows = merge_experiment(&bench, &cfg)?;
    println!("clean MAP {:.4}", bench.clean_map());
    print!("{}", merge_rows_to_table(&rows));
    if let Some(p) = &a.csv {
        write(p, &merge_rows_to_csv(&rows))?;
    }
    Ok(())
}

fn cmd_damage(a: DamageArgs) -> Result<()> {
    let bench = load_desk(&a.desk)?;
    let cfg = DamageConfig {
        trials: a.trials,
        seed: a.seed,
        max_df: a.max_df,
        ..DamageConfig::default()
    };
    let s = summarize_damage(&damage_experiment(&bench, &cfg)?);
    println!("trials                 {}", s.trials);
    println!("clean MAP              {:.4}", s.clean_map);
    println!(
        "drop, unweighted       {:.2}%",
        100.0 * s.mean_unweighted_drop
    );
    println!(
        "drop, weighted         {:.2}%",
        100.0 * s.mean_weighted_drop
    );
    println!(
        "drop, word deleted     {:.2}%",
        100.0 * s.mean_deletion_drop
    );
    println!("weighted smaller drop  {}/{}", s.weighted_better, s.trials);
    Ok(())
}

fn cmd_recovery(a: RecoveryArgs) -> Result<()> {
    let bench = load_desk(&a.desk)?;
    let out = recovery_experiment(&bench, a.scenarios, &ErrorModel::default(), a.seed)?;
    for s in &out {
        println!(
            "{}\theard {}\tfor {}\tmarked {}\tsuggested {}",
            s.query_id,
            s.neighbor,
            s.true_word,
            s.marked_doc,
            s.top_candidate.as_deref().unwrap_or("-")
        );
    }
    let hits = out.iter().filter(|s| s.recovered()).count();
    println!("recovered {hits}/{}", out.len());
    Ok(())
}

fn cmd_add_user(a: AddUserArgs) -> Result<()> {
    let mut store = if a.profiles.exists() {
        ProfileStore::load(&a.profiles)?
    } else {
        ProfileStore::default()
    };
    let mut p = UserProfile::new(&a.user, &a.pin)?;
    for (channel, addr) in [
        (Channel::Email, &a.email),
        (Channel::Fax, &a.fax),
        (Channel::Postal, &a.postal),
    ] {
        if let Some(addr) = addr {
            p = p.with_address(channel, addr);
        }
    }
    p.preferred_format = a.format;
    p.preferred_threshold = a.threshold;
    store.insert(p);
    store.save(&a.profiles)?;
    println!("{} users in {}", store.len(), a.profiles.display());
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let mut config = ServiceConfig::load(&a.config)?;
    if let Some(l) = a.listen {
        config.listen = l;
    }
    let state = Arc::new(AppState::from_config(&config)?);
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_target(true)
        .init();
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&config.listen)
            .await
            .with_context(|| format!("cannot listen on {}", config.listen))?;
        let addr = listener.local_addr()?;
        let engine = state.engine();
        println!(
            "ivirs listening on http://{addr} ({} documents)",
            engine.collection.index().doc_count()
        );
        std::io::stdout().flush()?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        };
        ivirs_service::serve(listener, state, shutdown).await?;
        println!("ivirs stopped");
        std::io::stdout().flush()?;
        Ok(())
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Index(a) => cmd_index(a),
        Command::Search(a) => cmd_search(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Transcribe(a) => cmd_transcribe(a),
        Command::MergeExperiment(a) => cmd_merge(a),
        Command::DamageExperiment(a) => cmd_damage(a),
        Command::RecoveryExperiment(a) => cmd_recovery(a),
        Command::AddUser(a) => cmd_add_user(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

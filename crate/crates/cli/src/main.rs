//! Command-line front end for the rewriting pipeline.
//!
//! Subcommands: `ingest`, `index`, `run`, `fewshot-eval`, `report`,
//! `verify-sink`. Exit codes: 0 success, 1 domain failure, 2 usage or
//! configuration error (clap uses 2 for argument errors on its own).
//! Settings precedence is CLI flag over config file over built-in default.
//! Credentials come only from EMBED_API_KEY and LLM_API_KEY.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use requery_core::corpus;
use requery_core::embed::{embedder_from_spec, Embedder};
use requery_core::error::Error;
use requery_core::fewshot::{
    build_store, evaluate_fewshot, write_report, ExemplarPair, ExemplarStore,
    DEFAULT_EXEMPLAR_COUNT,
};
use requery_core::pipeline::{
    read_stats, run_pipeline, verify_sink, RewritePair, RunStats, SinkPaths,
};
use requery_core::rewriter::backend_from_spec;
use requery_core::transport::{HttpJson, ReqwestTransport};
use requery_core::vindex::{build_index, VectorIndex};
use requery_core::PipelineConfig;

const DEFAULT_CONFIG_FILE: &str = "requery.toml";
const HTTP_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Parser)]
#[command(
    name = "requery",
    version,
    about = "Builds verified query-rewrite datasets from retrieval feedback"
)]
struct Cli {
    /// TOML config file; requery.toml is picked up automatically when present.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Escalate embedder fingerprint mismatches from warning to error.
    #[arg(long, global = true)]
    strict: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a raw dataset into the corpus JSONL store.
    Ingest(IngestArgs),
    /// Embed the corpus documents and write the vector index.
    Index(IndexArgs),
    /// Detect misses, rewrite them, verify, and assemble the dataset.
    Run(RunArgs),
    /// Rewrite queries with store exemplars and report rank movement.
    FewshotEval(FewshotArgs),
    /// Print the stats report of a finished run.
    Report(ReportArgs),
    /// Re-check that every assembled pair still ranks its gold within k.
    VerifySink(VerifyArgs),
}

#[derive(Copy, Clone, ValueEnum)]
enum FormatArg {
    Squad,
    Jsonl,
}

#[derive(Args)]
struct IngestArgs {
    /// Input format.
    #[arg(long, value_enum)]
    format: FormatArg,

    /// Raw input file.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,

    /// Output path; a directory receives corpus.jsonl inside it.
    #[arg(long = "out", value_name = "PATH")]
    output: PathBuf,
}

#[derive(Args)]
struct IndexArgs {
    /// Corpus store to index (default: paths.corpus from config).
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,

    /// Where to write the index (default: paths.index from config).
    #[arg(long = "out", value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Corpus store to process (default: paths.corpus from config).
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,

    /// Sink directory for pairs/rejections/stats (default: paths.sink).
    #[arg(long, value_name = "DIR")]
    sink: Option<PathBuf>,

    /// Retrieval cutoff k.
    #[arg(long = "top-k", value_name = "K")]
    top_k: Option<usize>,

    /// Rewrite attempts per miss case.
    #[arg(long, value_name = "N")]
    max_attempts: Option<u32>,

    /// Worker threads for embedding and rewriting.
    #[arg(long, value_name = "N")]
    parallelism: Option<usize>,

    /// Skip query ids already present in the sink.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct FewshotArgs {
    /// Exemplar store directory (default: paths.store from config).
    #[arg(long, value_name = "DIR")]
    store: Option<PathBuf>,

    /// Build the store from a pipeline pairs file before evaluating.
    #[arg(long, value_name = "FILE")]
    pairs: Option<PathBuf>,

    /// Build the store from an exemplar JSONL file before evaluating.
    #[arg(long, value_name = "FILE")]
    exemplars: Option<PathBuf>,

    /// Corpus store holding the evaluation queries and documents
    /// (default: paths.corpus from config).
    #[arg(long, value_name = "FILE")]
    queries: Option<PathBuf>,

    /// Pre-built evaluation index (default: paths.index when the file
    /// exists, otherwise the index is built from the corpus).
    #[arg(long, value_name = "FILE")]
    index: Option<PathBuf>,

    /// Report output directory (default: paths.reports from config).
    #[arg(long = "out", value_name = "DIR")]
    output: Option<PathBuf>,

    /// Retrieval cutoff recorded in the summary.
    #[arg(long, value_name = "K")]
    k: Option<usize>,

    /// Exemplars per prompt.
    #[arg(long, value_name = "M")]
    m: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Sink directory of the run to summarize (default: paths.sink).
    #[arg(long, value_name = "DIR")]
    sink: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Pairs file to re-check (default: paths.sink/pairs.jsonl).
    #[arg(long, value_name = "FILE")]
    pairs: Option<PathBuf>,

    /// Index to verify against (default: paths.index from config).
    #[arg(long, value_name = "FILE")]
    index: Option<PathBuf>,

    /// Retrieval cutoff k (default: retriever.top_k from config).
    #[arg(long, value_name = "K")]
    k: Option<usize>,
}

/// A command failure carrying its exit code: 1 domain, 2 usage/config.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn domain(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Index(args) => cmd_index(&cli, args),
        Command::Run(args) => cmd_run(&cli, args),
        Command::FewshotEval(args) => cmd_fewshot_eval(&cli, args),
        Command::Report(args) => cmd_report(&cli, args),
        Command::VerifySink(args) => cmd_verify_sink(&cli, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    match &cli.config {
        Some(path) => PipelineConfig::load(path).map_err(|e| Failure::usage(e.to_string())),
        None => {
            let default_path = Path::new(DEFAULT_CONFIG_FILE);
            if default_path.exists() {
                PipelineConfig::load(default_path).map_err(|e| Failure::usage(e.to_string()))
            } else {
                Ok(PipelineConfig::default())
            }
        }
    }
}

fn transport() -> Result<Arc<dyn HttpJson>, Failure> {
    Ok(Arc::new(ReqwestTransport::new(HTTP_TIMEOUT)?))
}

/// Attach the offending path to bare IO errors so messages are actionable.
fn with_path<T>(result: requery_core::error::Result<T>, path: &Path) -> Result<T, Failure> {
    result.map_err(|e| match e {
        Error::Io(io) => Failure::domain(format!("{}: {io}", path.display())),
        other => other.into(),
    })
}

fn enforce_fingerprint(check: requery_core::error::Result<()>, strict: bool) -> CmdResult {
    match check {
        Ok(()) => Ok(()),
        Err(e) if strict => Err(Failure::domain(e.to_string())),
        Err(e) => {
            eprintln!("warning: {e}");
            Ok(())
        }
    }
}

fn ensure_parent_dir(path: &Path) -> CmdResult {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Failure::domain(format!("{}: {e}", parent.display())))?;
        }
    }
    Ok(())
}

fn cmd_ingest(args: &IngestArgs) -> CmdResult {
    let raw = std::fs::read(&args.input)
        .map_err(|e| Failure::domain(format!("{}: {e}", args.input.display())))?;
    let (corpus, report) = match args.format {
        FormatArg::Squad => corpus::ingest_squad(&raw)?,
        FormatArg::Jsonl => corpus::ingest_jsonl(&raw)?,
    };
    let manifest = corpus::validate(&corpus)?;

    let out_path = resolve_corpus_out(&args.output);
    ensure_parent_dir(&out_path)?;
    with_path(corpus::write_store(&corpus, &out_path), &out_path)?;

    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Failure::domain(format!("manifest rendering failed: {e}")))?;
    println!("{manifest_json}");
    if report.questions_skipped_empty_context > 0 || report.duplicate_contexts_merged > 0 {
        println!(
            "skipped {} question(s) with empty context, merged {} duplicate context(s)",
            report.questions_skipped_empty_context, report.duplicate_contexts_merged
        );
    }
    println!("wrote {}", out_path.display());
    Ok(())
}

fn resolve_corpus_out(requested: &Path) -> PathBuf {
    let looks_like_dir = requested
        .to_str()
        .is_some_and(|s| s.ends_with('/') || s.ends_with(std::path::MAIN_SEPARATOR));
    if requested.is_dir() || looks_like_dir {
        requested.join("corpus.jsonl")
    } else {
        requested.to_path_buf()
    }
}

fn load_corpus(path: &Path) -> Result<corpus::Corpus, Failure> {
    with_path(corpus::read_store(path), path)
}

fn cmd_index(cli: &Cli, args: &IndexArgs) -> CmdResult {
    let config = load_config(cli)?;
    let corpus_path = args.corpus.clone().unwrap_or(config.paths.corpus.clone());
    let corpus = load_corpus(&corpus_path)?;
    corpus::validate(&corpus)?;

    let embedder = embedder_from_spec(&config.embedder, transport()?, config.pipeline.parallelism)?;
    let index = build_index(&corpus.documents, embedder.as_ref())?;

    let out_path = args.output.clone().unwrap_or(config.paths.index.clone());
    ensure_parent_dir(&out_path)?;
    with_path(index.save(&out_path), &out_path)?;
    println!(
        "indexed {} document(s), dim {}, embedder {}, content hash {}",
        index.len(),
        index.dim(),
        index.fingerprint(),
        index.content_hash()
    );
    println!("wrote {}", out_path.display());
    Ok(())
}

fn cmd_run(cli: &Cli, args: &RunArgs) -> CmdResult {
    let config = load_config(cli)?;
    let corpus_path = args.corpus.clone().unwrap_or(config.paths.corpus.clone());
    let corpus = load_corpus(&corpus_path)?;
    corpus::validate(&corpus)?;

    let embedder = embedder_from_spec(&config.embedder, transport()?, config.pipeline.parallelism)?;
    let backend = backend_from_spec(&config.llm, transport()?)?;

    let mut opts = config.run_options();
    if let Some(k) = args.top_k {
        opts.retriever.top_k = k;
    }
    if let Some(n) = args.max_attempts {
        opts.max_attempts = n;
    }
    if let Some(n) = args.parallelism {
        opts.parallelism = n;
    }
    opts.resume = args.resume;
    opts.retriever.validate()?;
    if opts.max_attempts == 0 {
        return Err(Failure::usage("max attempts must be at least 1"));
    }

    let sink = SinkPaths::new(args.sink.clone().unwrap_or(config.paths.sink.clone()));
    let outcome = run_pipeline(
        &corpus,
        embedder.as_ref(),
        backend.as_ref(),
        &config.llm,
        &opts,
        &sink,
    )?;

    ensure_parent_dir(&config.paths.index)?;
    with_path(outcome.index.save(&config.paths.index), &config.paths.index)?;

    print_stats(&outcome.stats);
    println!(
        "{} new pairs, {} new rejections ({} resumed)",
        outcome.new_pairs, outcome.new_rejections, outcome.resumed_skipped
    );
    println!("sink {}", sink.dir.display());
    println!("index {}", config.paths.index.display());
    Ok(())
}

fn print_stats(stats: &RunStats) {
    println!("queries        {}", stats.n_queries);
    println!(
        "misses         {} (miss rate {:.1}%)",
        stats.n_miss,
        stats.miss_rate * 100.0
    );
    println!(
        "pairs kept     {} (valid-rewrite rate {:.1}%)",
        stats.n_pairs,
        stats.valid_rewrite_rate * 100.0
    );
    println!("detect errors  {}", stats.n_detect_errors);
    if !stats.attempts_histogram.is_empty() {
        let rendered: Vec<String> = stats
            .attempts_histogram
            .iter()
            .map(|(attempts, count)| format!("{attempts} attempt(s) x{count}"))
            .collect();
        println!("attempts       {}", rendered.join(", "));
    }
    println!("generated at   {}", stats.generated_at);
}

fn cmd_fewshot_eval(cli: &Cli, args: &FewshotArgs) -> CmdResult {
    let config = load_config(cli)?;
    let embedder = embedder_from_spec(&config.embedder, transport()?, config.pipeline.parallelism)?;
    let backend = backend_from_spec(&config.llm, transport()?)?;

    let store_dir = args.store.clone().unwrap_or(config.paths.store.clone());
    let store = resolve_store(args, &store_dir, embedder.as_ref())?;
    enforce_fingerprint(
        store.index().check_fingerprint(&embedder.fingerprint()),
        cli.strict,
    )?;

    let queries_path = args.queries.clone().unwrap_or(config.paths.corpus.clone());
    let corpus = load_corpus(&queries_path)?;
    if corpus.queries.is_empty() {
        return Err(Failure::domain(format!(
            "{}: no queries to evaluate",
            queries_path.display()
        )));
    }

    let index = resolve_eval_index(args, &config, &corpus, embedder.as_ref())?;
    enforce_fingerprint(index.check_fingerprint(&embedder.fingerprint()), cli.strict)?;

    let k = args.k.unwrap_or(config.retriever.top_k);
    let m = args.m.unwrap_or(DEFAULT_EXEMPLAR_COUNT);
    let report = evaluate_fewshot(
        &corpus.queries,
        &index,
        &store,
        embedder.as_ref(),
        backend.as_ref(),
        &config.llm,
        m,
        k,
        config.pipeline.parallelism,
        &queries_path.display().to_string(),
    )?;

    let out_dir = args.output.clone().unwrap_or(config.paths.reports.clone());
    write_report(&report, &out_dir)?;

    let s = &report.summary;
    println!("queries        {}", s.n_queries);
    println!(
        "improved       {} ({:.1}%)",
        s.improved,
        percentage(s.improved, s.n_queries)
    );
    println!("unchanged      {}", s.unchanged);
    println!("degraded       {}", s.degraded);
    println!("errored        {}", s.errored);
    println!("mrr before     {:.4}", s.mrr_before);
    println!("mrr after      {:.4}", s.mrr_after);
    println!("reports {}", out_dir.display());
    Ok(())
}

fn percentage(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64 * 100.0
    }
}

fn resolve_store(
    args: &FewshotArgs,
    store_dir: &Path,
    embedder: &dyn Embedder,
) -> Result<ExemplarStore, Failure> {
    if args.pairs.is_some() && args.exemplars.is_some() {
        return Err(Failure::usage(
            "--pairs and --exemplars are mutually exclusive".to_string(),
        ));
    }
    if let Some(pairs_path) = &args.pairs {
        let pairs: Vec<RewritePair> =
            with_path(requery_core::util::read_jsonl(pairs_path), pairs_path)?;
        let exemplars: Vec<ExemplarPair> = pairs
            .into_iter()
            .map(|p| ExemplarPair {
                pair_id: p.query_id,
                original: p.original_text,
                rewritten: p.rewritten_text,
            })
            .collect();
        let store = build_store(exemplars, embedder)?;
        with_path(store.save(store_dir), store_dir)?;
        println!("built store with {} exemplar(s) at {}", store.len(), store_dir.display());
        return Ok(store);
    }
    if let Some(exemplar_path) = &args.exemplars {
        let exemplars: Vec<ExemplarPair> =
            with_path(requery_core::util::read_jsonl(exemplar_path), exemplar_path)?;
        let store = build_store(exemplars, embedder)?;
        with_path(store.save(store_dir), store_dir)?;
        println!("built store with {} exemplar(s) at {}", store.len(), store_dir.display());
        return Ok(store);
    }
    with_path(ExemplarStore::load(store_dir), store_dir)
}

fn resolve_eval_index(
    args: &FewshotArgs,
    config: &PipelineConfig,
    corpus: &corpus::Corpus,
    embedder: &dyn Embedder,
) -> Result<VectorIndex, Failure> {
    if let Some(path) = &args.index {
        return with_path(VectorIndex::load(path), path);
    }
    if config.paths.index.is_file() {
        return with_path(VectorIndex::load(&config.paths.index), &config.paths.index);
    }
    Ok(build_index(&corpus.documents, embedder)?)
}

fn cmd_report(cli: &Cli, args: &ReportArgs) -> CmdResult {
    let config = load_config(cli)?;
    let sink = SinkPaths::new(args.sink.clone().unwrap_or(config.paths.sink.clone()));
    let stats_path = sink.stats();
    let stats = with_path(read_stats(&stats_path), &stats_path)?;
    print_stats(&stats);
    Ok(())
}

fn cmd_verify_sink(cli: &Cli, args: &VerifyArgs) -> CmdResult {
    let config = load_config(cli)?;
    let sink = SinkPaths::new(config.paths.sink.clone());
    let pairs_path = args.pairs.clone().unwrap_or_else(|| sink.pairs());
    let index_path = args.index.clone().unwrap_or(config.paths.index.clone());

    let embedder = embedder_from_spec(&config.embedder, transport()?, config.pipeline.parallelism)?;
    let index = with_path(VectorIndex::load(&index_path), &index_path)?;
    enforce_fingerprint(index.check_fingerprint(&embedder.fingerprint()), cli.strict)?;

    let k = args.k.unwrap_or(config.retriever.top_k);
    let verification = with_path(
        verify_sink(&pairs_path, &index, embedder.as_ref(), k),
        &pairs_path,
    )?;
    println!(
        "{}/{} pair(s) verified at k = {k}",
        verification.n_ok, verification.n_pairs
    );
    for failure in &verification.failures {
        eprintln!("  {}: {}", failure.query_id, failure.message);
    }
    if verification.all_ok() {
        Ok(())
    } else {
        Err(Failure::domain(format!(
            "{} of {} pair(s) failed re-verification",
            verification.failures.len(),
            verification.n_pairs
        )))
    }
}

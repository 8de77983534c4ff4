//! Command-line front end: one binary, six subcommands.
//!
//! Exit codes are part of the interface: `0` success, `1` runtime failure,
//! `2` usage error (unknown flag, malformed argv), `3` configuration error
//! (missing or contradictory settings, bad config file). Help and version
//! requests exit `0`.
//!
//! Every subcommand accepts `--config FILE` holding `key = value` lines;
//! flags override file values and file values override built-in defaults.
//! Unknown keys, repeated keys, and unparseable values are configuration
//! errors, reported before any work starts.
//!
//! Logging goes to standard error as one JSON object per line with the
//! shape `{ts, level, event, fields}`. Output files never contain
//! timestamps and are written in deterministic order, so two runs with the
//! same arguments, files, and seed produce byte-identical artifacts.

use crate::corpus::{
    attach_subcorpora, build_bm25, compute_subcorpora, ingest_corpus, ingest_dataset,
    write_subcorpus_cache, Bm25Params, Corpus, QAExample,
};
use crate::embed::{DeterministicHashEmbedder, EmbeddingProvider, Encoder, ProjectionHead, RemoteEmbedder};
use crate::eval::{compare_systems, write_report_json, write_report_md, EvalSetup, SystemKind};
use crate::fixtures::{generate, write_fixture, FixtureKind, FixtureSpec};
use crate::lmscore::{AnswerScorer, MockScorer, RemoteScorer, ScoreCache};
use crate::retrieval::{
    embed_subcorpus, retrieve_with_embedded, write_retrieval_records, EmbeddedSubcorpus,
    RetrievalConfig, RetrievalRecord,
};
use crate::train::{
    gradient_check, jittered_identity_head, prepare, random_batch, train_loop, write_loss_curve,
    derive_seed, GradientReport, LossKind, TrainingConfig,
};
use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use std::collections::{BTreeMap, HashMap};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

const EXIT_OK: i32 = 0;
const EXIT_RUNTIME: i32 = 1;
const EXIT_CONFIG: i32 = 3;

// ── Errors ──────────────────────────────────────────────────────────────────

/// Failure classified by exit code: configuration problems exit 3,
/// everything that breaks after configuration was accepted exits 1.
#[derive(Debug)]
enum CliError {
    Config(String),
    Runtime(anyhow::Error),
}

impl<E> From<E> for CliError
where
    E: std::error::Error + Send + Sync + 'static,
{
    fn from(err: E) -> Self {
        CliError::Runtime(anyhow::Error::new(err))
    }
}

fn config_err(detail: impl Display) -> CliError {
    CliError::Config(detail.to_string())
}

// ── Logging ─────────────────────────────────────────────────────────────────

/// Line-delimited JSON event writer on standard error.
#[derive(Clone, Copy)]
struct Logger;

impl Logger {
    fn emit(self, level: &str, event: &str, fields: serde_json::Value) {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as f64 / 1000.0)
            .unwrap_or(0.0);
        eprintln!("{}", json!({ "ts": ts, "level": level, "event": event, "fields": fields }));
    }

    fn info(self, event: &str, fields: serde_json::Value) {
        self.emit("info", event, fields);
    }

    fn error(self, event: &str, fields: serde_json::Value) {
        self.emit("error", event, fields);
    }
}

// ── Config file ─────────────────────────────────────────────────────────────

/// Keys a config file may define. A key not in this list is a typo and is
/// rejected outright rather than silently ignored.
const KNOWN_KEYS: &[&str] = &[
    "balance_stages",
    "batch",
    "batch_size",
    "beta",
    "bm25_b",
    "bm25_k1",
    "cache",
    "corpus",
    "corpus_size",
    "dataset",
    "dedupe_self_pairs",
    "dim",
    "embedder",
    "epochs",
    "gamma",
    "head",
    "head_identity",
    "head_trained",
    "k",
    "kind",
    "limit",
    "loss",
    "lr",
    "n",
    "out_curve",
    "out_dir",
    "out_head",
    "output",
    "pool",
    "questions",
    "scorer",
    "seed",
    "step",
    "subcorpora",
    "subcorpus_limit",
    "systems",
    "threshold",
    "top_k_marginal",
    "vocab_size",
];

/// `key = value` settings loaded from `--config`, applied beneath flags.
#[derive(Debug, Default)]
struct FileSettings {
    values: BTreeMap<String, String>,
}

impl FileSettings {
    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                config_err(format!("config key {key:?}: cannot parse {raw:?}: {e}"))
            }),
        }
    }
}

fn parse_settings(content: &str) -> Result<FileSettings, CliError> {
    let mut values = BTreeMap::new();
    for (idx, raw) in content.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(config_err(format!(
                "config line {}: expected key = value, got {raw:?}",
                idx + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(config_err(format!("config line {}: unknown key {key:?}", idx + 1)));
        }
        if values.insert(key.clone(), value).is_some() {
            return Err(config_err(format!("config line {}: key {key:?} repeated", idx + 1)));
        }
    }
    Ok(FileSettings { values })
}

fn load_settings(path: Option<&Path>) -> Result<FileSettings, CliError> {
    let Some(path) = path else {
        return Ok(FileSettings::default());
    };
    let content = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read config file {}: {e}", path.display())))?;
    parse_settings(&content)
}

/// Flag value, else config-file value, else default.
fn setting<T: FromStr>(
    flag: Option<T>,
    file: &FileSettings,
    key: &str,
    default: T,
) -> Result<T, CliError>
where
    T::Err: Display,
{
    Ok(flag.or(file.get(key)?).unwrap_or(default))
}

/// Flag value, else config-file value, else nothing.
fn optional<T: FromStr>(
    flag: Option<T>,
    file: &FileSettings,
    key: &str,
) -> Result<Option<T>, CliError>
where
    T::Err: Display,
{
    Ok(flag.or(file.get(key)?))
}

/// Flag value, else config-file value, else a configuration error naming
/// the missing setting.
fn required<T: FromStr>(flag: Option<T>, file: &FileSettings, key: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    flag.or(file.get(key)?).ok_or_else(|| {
        config_err(format!(
            "missing required setting {key:?} (flag --{} or config key {key})",
            key.replace('_', "-")
        ))
    })
}

// ── Shared wiring ───────────────────────────────────────────────────────────

fn build_provider(spec: &str, dim: usize) -> Result<Box<dyn EmbeddingProvider>, CliError> {
    if spec == "hash" {
        return Ok(Box::new(DeterministicHashEmbedder::new(dim)?));
    }
    if let Some(url) = spec.strip_prefix("remote:") {
        return Ok(Box::new(RemoteEmbedder::new(url, dim)?));
    }
    Err(config_err(format!("embedder must be \"hash\" or \"remote:URL\", got {spec:?}")))
}

fn build_scorer(spec: &str) -> Result<Box<dyn AnswerScorer>, CliError> {
    if spec == "mock" {
        return Ok(Box::new(MockScorer::default()));
    }
    if let Some(url) = spec.strip_prefix("remote:") {
        return Ok(Box::new(RemoteScorer::new(url)));
    }
    Err(config_err(format!("scorer must be \"mock\" or \"remote:URL\", got {spec:?}")))
}

fn open_cache(path: Option<&Path>) -> Result<ScoreCache, CliError> {
    match path {
        None => Ok(ScoreCache::in_memory()),
        Some(p) => Ok(ScoreCache::open(p)?),
    }
}

/// Load a head checkpoint, or build an identity head at `dim` when no
/// checkpoint was named. An explicit `--dim` that contradicts a loaded
/// checkpoint is rejected.
fn load_head(
    path: Option<&Path>,
    dim_setting: Option<usize>,
    default_dim: usize,
) -> Result<ProjectionHead, CliError> {
    match path {
        None => Ok(ProjectionHead::identity(dim_setting.unwrap_or(default_dim))?),
        Some(p) => {
            let head = ProjectionHead::load(p)?;
            if let Some(dim) = dim_setting {
                if head.dim() != dim {
                    return Err(config_err(format!(
                        "head {} has dim {}, but dim = {dim} was requested",
                        p.display(),
                        head.dim()
                    )));
                }
            }
            Ok(head)
        }
    }
}

/// Make sure every example carries a sub-corpus: attach a cache file when
/// one was named, otherwise fill the gaps by BM25 pre-retrieval.
fn ensure_subcorpora(
    examples: &mut [QAExample],
    corpus: &Corpus,
    cache_file: Option<&Path>,
    limit: usize,
    file: &FileSettings,
) -> Result<(), CliError> {
    if let Some(path) = cache_file {
        attach_subcorpora(path, examples)?;
        return Ok(());
    }
    if examples.iter().all(|e| !e.subcorpus_ids.is_empty()) {
        return Ok(());
    }
    let params = Bm25Params {
        k1: setting(None, file, "bm25_k1", Bm25Params::default().k1)?,
        b: setting(None, file, "bm25_b", Bm25Params::default().b)?,
    };
    let index = build_bm25(corpus, params)?;
    compute_subcorpora(&index, examples, limit);
    Ok(())
}

fn parse_loss(label: &str) -> Result<LossKind, CliError> {
    LossKind::parse(label)
        .ok_or_else(|| config_err(format!("loss must be one of rag, kl, ce; got {label:?}")))
}

fn parse_systems(raw: &str) -> Result<Vec<SystemKind>, CliError> {
    let systems: Vec<SystemKind> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            SystemKind::parse(s).ok_or_else(|| config_err(format!("unknown system {s:?}")))
        })
        .collect::<Result<_, _>>()?;
    if systems.is_empty() {
        return Err(config_err("systems list is empty"));
    }
    Ok(systems)
}

// ── Argument surface ────────────────────────────────────────────────────────

#[derive(Parser, Debug)]
#[command(
    name = "adapcr",
    version,
    about = "Adaptive passage combination retrieval: fixtures, retrieval, training, evaluation"
)]
struct Cli {
    /// Config file with `key = value` lines; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a JSONL corpus and optionally pre-retrieve BM25 sub-corpora.
    Ingest(IngestArgs),
    /// Generate a seeded synthetic fixture: corpus, dataset, and truth files.
    Fixture(FixtureArgs),
    /// Run two-stage retrieval over a dataset and write winner records.
    Retrieve(RetrieveArgs),
    /// Train the projection head; write the head and a loss-curve CSV.
    Train(TrainArgs),
    /// Compare retrieval arms; write report.json and report.md.
    Eval(EvalArgs),
    /// Check analytic loss gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Corpus JSONL file, one {"id", "text"} object per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Dataset JSONL file, one {"question", "answers"} object per line.
    #[arg(long)]
    questions: Option<PathBuf>,
    /// Passages kept per question by BM25 pre-retrieval.
    #[arg(long)]
    limit: Option<usize>,
    /// Where to write the sub-corpus cache JSONL; requires --questions.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FixtureArgs {
    /// Fixture kind: single_hop, redundant, or two_hop.
    #[arg(long)]
    kind: Option<String>,
    /// Number of questions to plant.
    #[arg(long)]
    n: Option<usize>,
    /// Total corpus size including planted passages.
    #[arg(long)]
    corpus_size: Option<usize>,
    /// Background vocabulary size.
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Base RNG seed; every derived stream is keyed off it.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for corpus.jsonl, dataset.jsonl, and truth.jsonl.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RetrieveArgs {
    /// Corpus JSONL file, one {"id", "text"} object per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Dataset JSONL with the questions to answer.
    #[arg(long)]
    questions: Option<PathBuf>,
    /// First-stage depth (candidates per stage list).
    #[arg(long)]
    k: Option<usize>,
    /// Projection-head checkpoint; identity when omitted.
    #[arg(long)]
    head: Option<PathBuf>,
    /// Output JSONL of winner records.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Embedding dimension for the identity head.
    #[arg(long)]
    dim: Option<usize>,
    /// Passages kept per question when BM25 builds sub-corpora on the fly.
    #[arg(long)]
    subcorpus_limit: Option<usize>,
    /// Pre-computed sub-corpus cache from `ingest`.
    #[arg(long)]
    subcorpora: Option<PathBuf>,
    /// Skip second-stage partners equal to the first passage.
    #[arg(long)]
    dedupe_self_pairs: Option<bool>,
    /// Embedding provider: "hash" or "remote:URL".
    #[arg(long)]
    embedder: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset JSONL file, one {"question", "answers"} object per line.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Corpus JSONL file, one {"id", "text"} object per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Training loss: rag, kl, or ce.
    #[arg(long)]
    loss: Option<String>,
    /// Retriever softmax temperature.
    #[arg(long)]
    gamma: Option<f64>,
    /// LM softmax temperature for the KL loss.
    #[arg(long)]
    beta: Option<f64>,
    /// Full passes over the prepared pools.
    #[arg(long)]
    epochs: Option<usize>,
    /// Examples per gradient step.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Gradient-descent step size.
    #[arg(long)]
    lr: Option<f64>,
    /// Base RNG seed; every derived stream is keyed off it.
    #[arg(long)]
    seed: Option<u64>,
    /// Answer scorer: "mock" or "remote:URL".
    #[arg(long)]
    scorer: Option<String>,
    /// Where to write the trained head checkpoint.
    #[arg(long)]
    out_head: Option<PathBuf>,
    /// Where to write the loss-curve CSV.
    #[arg(long)]
    out_curve: Option<PathBuf>,
    /// Candidates the RAG marginal sums over.
    #[arg(long)]
    top_k_marginal: Option<usize>,
    /// Force both stages into the RAG marginal when available.
    #[arg(long)]
    balance_stages: Option<bool>,
    /// First-stage depth (candidates per stage list).
    #[arg(long)]
    k: Option<usize>,
    /// Embedding dimension for the identity head.
    #[arg(long)]
    dim: Option<usize>,
    /// Passages kept per question when BM25 builds sub-corpora on the fly.
    #[arg(long)]
    subcorpus_limit: Option<usize>,
    /// Pre-computed sub-corpus cache from `ingest`.
    #[arg(long)]
    subcorpora: Option<PathBuf>,
    /// Persistent score-cache JSONL; in-memory when omitted.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Initial head checkpoint; identity when omitted.
    #[arg(long)]
    head: Option<PathBuf>,
    /// Embedding provider: "hash" or "remote:URL".
    #[arg(long)]
    embedder: Option<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Dataset JSONL file, one {"question", "answers"} object per line.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Corpus JSONL file, one {"id", "text"} object per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Comma-separated arms: no_retrieval, fixed_top2, adapcr, adapcr_rerank.
    #[arg(long)]
    systems: Option<String>,
    /// Trained head for the adapcr_rerank arm.
    #[arg(long)]
    head_trained: Option<PathBuf>,
    /// Checkpoint for the untrained arms; identity when omitted.
    #[arg(long)]
    head_identity: Option<PathBuf>,
    /// Answer scorer: "mock" or "remote:URL".
    #[arg(long)]
    scorer: Option<String>,
    /// Base RNG seed; every derived stream is keyed off it.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for report.json and report.md.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// First-stage depth (candidates per stage list).
    #[arg(long)]
    k: Option<usize>,
    /// Embedding dimension for the identity head.
    #[arg(long)]
    dim: Option<usize>,
    /// Passages kept per question when BM25 builds sub-corpora on the fly.
    #[arg(long)]
    subcorpus_limit: Option<usize>,
    /// Pre-computed sub-corpus cache from `ingest`.
    #[arg(long)]
    subcorpora: Option<PathBuf>,
    /// Persistent score-cache JSONL; in-memory when omitted.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Embedding provider: "hash" or "remote:URL".
    #[arg(long)]
    embedder: Option<String>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Check a single loss instead of all three.
    #[arg(long)]
    loss: Option<String>,
    /// Embedding dimension of the synthetic pools.
    #[arg(long)]
    dim: Option<usize>,
    /// Candidates per example.
    #[arg(long)]
    pool: Option<usize>,
    /// Examples per batch.
    #[arg(long)]
    batch: Option<usize>,
    /// Base RNG seed; every derived stream is keyed off it.
    #[arg(long)]
    seed: Option<u64>,
    /// Finite-difference step.
    #[arg(long)]
    step: Option<f64>,
    /// Maximum accepted relative error.
    #[arg(long)]
    threshold: Option<f64>,
    /// Corrupt one analytic gradient entry (negative-control hook).
    #[arg(long, hide = true)]
    corrupt: bool,
}

// ── Entry point ─────────────────────────────────────────────────────────────

/// Parse argv and run; returns the process exit code.
pub fn run() -> i32 {
    let logger = Logger;
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version print to stdout and exit 0; real usage
            // errors print to stderr and exit 2. Clap encodes that split.
            let code = err.exit_code();
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli, logger) {
        Ok(()) => EXIT_OK,
        Err(CliError::Config(detail)) => {
            logger.error("config_error", json!({ "detail": detail }));
            EXIT_CONFIG
        }
        Err(CliError::Runtime(err)) => {
            logger.error("runtime_error", json!({ "detail": format!("{err:#}") }));
            EXIT_RUNTIME
        }
    }
}

fn dispatch(cli: Cli, logger: Logger) -> Result<(), CliError> {
    let file = load_settings(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args, &file, logger),
        Command::Fixture(args) => cmd_fixture(args, &file, logger),
        Command::Retrieve(args) => cmd_retrieve(args, &file, logger),
        Command::Train(args) => cmd_train(args, &file, logger),
        Command::Eval(args) => cmd_eval(args, &file, logger),
        Command::Gradcheck(args) => cmd_gradcheck(args, &file, logger),
    }
}

// ── Subcommands ─────────────────────────────────────────────────────────────

fn cmd_ingest(args: IngestArgs, file: &FileSettings, logger: Logger) -> Result<(), CliError> {
    let corpus_path: PathBuf = required(args.corpus, file, "corpus")?;
    let questions: Option<PathBuf> = optional(args.questions, file, "questions")?;
    let output: Option<PathBuf> = optional(args.output, file, "output")?;
    let limit = setting(args.limit, file, "limit", 100)?;
    if output.is_some() && questions.is_none() {
        return Err(config_err("--output requires --questions"));
    }

    let corpus = ingest_corpus(&corpus_path)?;
    logger.info("corpus_ingested", json!({ "passages": corpus.len() }));

    if let Some(questions) = questions {
        let mut examples = ingest_dataset(&questions)?;
        logger.info("dataset_ingested", json!({ "questions": examples.len() }));
        let params = Bm25Params {
            k1: setting(None, file, "bm25_k1", Bm25Params::default().k1)?,
            b: setting(None, file, "bm25_b", Bm25Params::default().b)?,
        };
        let index = build_bm25(&corpus, params)?;
        logger.info(
            "bm25_index_built",
            json!({ "total_docs": index.total_docs(), "avg_doc_length": index.avg_doc_length() }),
        );
        compute_subcorpora(&index, &mut examples, limit);
        if let Some(output) = output {
            write_subcorpus_cache(&output, &examples)?;
            logger.info(
                "subcorpora_written",
                json!({ "path": output.display().to_string(), "limit": limit }),
            );
        }
    }
    Ok(())
}

fn cmd_fixture(args: FixtureArgs, file: &FileSettings, logger: Logger) -> Result<(), CliError> {
    let kind_label: String = required(args.kind, file, "kind")?;
    let kind = FixtureKind::parse(&kind_label).ok_or_else(|| {
        config_err(format!("kind must be single_hop, redundant, or two_hop; got {kind_label:?}"))
    })?;
    let spec = FixtureSpec {
        kind,
        n_questions: required(args.n, file, "n")?,
        corpus_size: required(args.corpus_size, file, "corpus_size")?,
        vocab_size: setting(args.vocab_size, file, "vocab_size", 200)?,
        seed: setting(args.seed, file, "seed", 0)?,
    };
    let out_dir: PathBuf = required(args.out_dir, file, "out_dir")?;
    spec.validate().map_err(config_err)?;

    let fixture = generate(&spec)?;
    logger.info(
        "fixture_generated",
        json!({
            "kind": kind.label(),
            "questions": spec.n_questions,
            "corpus_size": spec.corpus_size,
            "verified_fraction": fixture.stats.verified_fraction,
            "resample_rounds": fixture.stats.resample_rounds,
        }),
    );
    write_fixture(&out_dir, &fixture)?;
    logger.info("fixture_written", json!({ "dir": out_dir.display().to_string() }));
    Ok(())
}

fn cmd_retrieve(args: RetrieveArgs, file: &FileSettings, logger: Logger) -> Result<(), CliError> {
    let corpus_path: PathBuf = required(args.corpus, file, "corpus")?;
    let questions: PathBuf = required(args.questions, file, "questions")?;
    let output: PathBuf = required(args.output, file, "output")?;
    let config = RetrievalConfig {
        k: setting(args.k, file, "k", RetrievalConfig::default().k)?,
        subcorpus_limit: setting(args.subcorpus_limit, file, "subcorpus_limit", 100)?,
        dedupe_self_pairs: setting(args.dedupe_self_pairs, file, "dedupe_self_pairs", true)?,
    };
    config.validate().map_err(config_err)?;
    let dim_setting: Option<usize> = optional(args.dim, file, "dim")?;
    let head_path: Option<PathBuf> = optional(args.head, file, "head")?;
    let embedder: String = setting(args.embedder, file, "embedder", "hash".into())?;
    let subcorpora: Option<PathBuf> = optional(args.subcorpora, file, "subcorpora")?;

    let corpus = ingest_corpus(&corpus_path)?;
    let mut examples = ingest_dataset(&questions)?;
    ensure_subcorpora(&mut examples, &corpus, subcorpora.as_deref(), config.subcorpus_limit, file)?;

    let head = load_head(head_path.as_deref(), dim_setting, 256)?;
    let provider = build_provider(&embedder, head.dim())?;
    let encoder = Encoder::new(provider.as_ref(), &head)?;

    let mut records = Vec::with_capacity(examples.len());
    let mut embedded: HashMap<Vec<String>, EmbeddedSubcorpus> = HashMap::new();
    for (idx, example) in examples.iter().enumerate() {
        if !embedded.contains_key(&example.subcorpus_ids) {
            let sub = embed_subcorpus(&corpus, &example.subcorpus_ids, &encoder)?;
            embedded.insert(example.subcorpus_ids.clone(), sub);
        }
        let result = retrieve_with_embedded(
            &example.question,
            &embedded[&example.subcorpus_ids],
            &encoder,
            &config,
        )?;
        records.push(RetrievalRecord::from_retrieval(idx, &result));
    }
    write_retrieval_records(&output, &records)?;
    logger.info(
        "retrieval_written",
        json!({ "questions": records.len(), "k": config.k, "output": output.display().to_string() }),
    );
    Ok(())
}

fn cmd_train(args: TrainArgs, file: &FileSettings, logger: Logger) -> Result<(), CliError> {
    let dataset_path: PathBuf = required(args.dataset, file, "dataset")?;
    let corpus_path: PathBuf = required(args.corpus, file, "corpus")?;
    let out_head: PathBuf = required(args.out_head, file, "out_head")?;
    let out_curve: PathBuf = required(args.out_curve, file, "out_curve")?;
    let loss = parse_loss(&setting(args.loss, file, "loss", "rag".into())?)?;
    let defaults = TrainingConfig::default();
    let config = TrainingConfig {
        loss,
        gamma: setting(args.gamma, file, "gamma", defaults.gamma)?,
        beta: setting(args.beta, file, "beta", defaults.beta)?,
        top_k_marginal: setting(args.top_k_marginal, file, "top_k_marginal", defaults.top_k_marginal)?,
        learning_rate: setting(args.lr, file, "lr", defaults.learning_rate)?,
        epochs: setting(args.epochs, file, "epochs", defaults.epochs)?,
        batch_size: setting(args.batch_size, file, "batch_size", defaults.batch_size)?,
        seed: setting(args.seed, file, "seed", 0)?,
        balance_stages: setting(args.balance_stages, file, "balance_stages", false)?,
    };
    config.validate().map_err(config_err)?;
    let retrieval = RetrievalConfig {
        k: setting(args.k, file, "k", RetrievalConfig::default().k)?,
        subcorpus_limit: setting(args.subcorpus_limit, file, "subcorpus_limit", 100)?,
        dedupe_self_pairs: true,
    };
    retrieval.validate().map_err(config_err)?;
    let dim_setting: Option<usize> = optional(args.dim, file, "dim")?;
    let head_path: Option<PathBuf> = optional(args.head, file, "head")?;
    let embedder: String = setting(args.embedder, file, "embedder", "hash".into())?;
    let scorer_spec: String = setting(args.scorer, file, "scorer", "mock".into())?;
    let cache_path: Option<PathBuf> = optional(args.cache, file, "cache")?;
    let subcorpora: Option<PathBuf> = optional(args.subcorpora, file, "subcorpora")?;

    let corpus = ingest_corpus(&corpus_path)?;
    let mut examples = ingest_dataset(&dataset_path)?;
    ensure_subcorpora(&mut examples, &corpus, subcorpora.as_deref(), retrieval.subcorpus_limit, file)?;

    let head = load_head(head_path.as_deref(), dim_setting, 256)?;
    let provider = build_provider(&embedder, head.dim())?;
    let scorer = build_scorer(&scorer_spec)?;
    let cache = open_cache(cache_path.as_deref())?;

    let prepared = prepare(
        &examples,
        &corpus,
        provider.as_ref(),
        &head,
        &retrieval,
        scorer.as_ref(),
        &cache,
        &config,
    )?;
    logger.info(
        "dataset_prepared",
        json!({
            "retained": prepared.filter.retained.len(),
            "dropped": prepared.filter.dropped.len(),
            "batches": prepared.batches.len(),
        }),
    );

    let outcome = train_loop(&prepared, &config, &head)?;
    let final_loss = outcome.curve.last().map(|s| s.loss);
    outcome.head.save(&out_head)?;
    write_loss_curve(&out_curve, &outcome.curve)?;
    logger.info(
        "training_finished",
        json!({
            "loss": loss.label(),
            "epochs": config.epochs,
            "final_loss": final_loss,
            "clamped_marginals": outcome.clamp_count,
            "out_head": out_head.display().to_string(),
            "out_curve": out_curve.display().to_string(),
        }),
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs, file: &FileSettings, logger: Logger) -> Result<(), CliError> {
    let dataset_path: PathBuf = required(args.dataset, file, "dataset")?;
    let corpus_path: PathBuf = required(args.corpus, file, "corpus")?;
    let out_dir: PathBuf = required(args.out_dir, file, "out_dir")?;
    let systems = parse_systems(&setting(
        args.systems,
        file,
        "systems",
        "no_retrieval,fixed_top2,adapcr,adapcr_rerank".into(),
    )?)?;
    let retrieval = RetrievalConfig {
        k: setting(args.k, file, "k", RetrievalConfig::default().k)?,
        subcorpus_limit: setting(args.subcorpus_limit, file, "subcorpus_limit", 100)?,
        dedupe_self_pairs: true,
    };
    retrieval.validate().map_err(config_err)?;
    let dim_setting: Option<usize> = optional(args.dim, file, "dim")?;
    let identity_path: Option<PathBuf> =
        optional(args.head_identity, file, "head_identity")?;
    let trained_path: Option<PathBuf> =
        optional(args.head_trained, file, "head_trained")?;
    let embedder: String = setting(args.embedder, file, "embedder", "hash".into())?;
    let scorer_spec: String = setting(args.scorer, file, "scorer", "mock".into())?;
    let cache_path: Option<PathBuf> = optional(args.cache, file, "cache")?;
    let subcorpora: Option<PathBuf> = optional(args.subcorpora, file, "subcorpora")?;
    let seed: u64 = setting(args.seed, file, "seed", 0)?;

    if systems.contains(&SystemKind::AdapcrRerank) && trained_path.is_none() {
        return Err(config_err(
            "adapcr_rerank needs --head-trained; pass one or drop the arm from --systems",
        ));
    }

    let corpus = ingest_corpus(&corpus_path)?;
    let mut examples = ingest_dataset(&dataset_path)?;
    ensure_subcorpora(&mut examples, &corpus, subcorpora.as_deref(), retrieval.subcorpus_limit, file)?;

    let identity_head = load_head(identity_path.as_deref(), dim_setting, 256)?;
    let trained_head = match trained_path.as_deref() {
        None => None,
        Some(p) => Some(load_head(Some(p), Some(identity_head.dim()), identity_head.dim())?),
    };
    let provider = build_provider(&embedder, identity_head.dim())?;
    let scorer = build_scorer(&scorer_spec)?;
    let cache = open_cache(cache_path.as_deref())?;

    let setup = EvalSetup {
        provider: provider.as_ref(),
        identity_head: &identity_head,
        trained_head: trained_head.as_ref(),
        scorer: scorer.as_ref(),
        cache: &cache,
        retrieval,
    };
    logger.info(
        "evaluation_started",
        json!({ "questions": examples.len(), "systems": systems.len(), "seed": seed }),
    );
    let report = compare_systems(&systems, &examples, &corpus, &setup)?;
    for row in &report.rows {
        logger.info(
            "system_evaluated",
            json!({
                "system": row.metrics.system_label,
                "em": row.metrics.em,
                "f1": row.metrics.f1,
                "mean_log_likelihood": row.mean_log_likelihood,
                "n": row.metrics.n_examples,
            }),
        );
    }
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Runtime(anyhow!("cannot create {}: {e}", out_dir.display())))?;
    write_report_json(&out_dir.join("report.json"), &report)?;
    write_report_md(&out_dir.join("report.md"), &report)?;
    logger.info("report_written", json!({ "dir": out_dir.display().to_string() }));
    Ok(())
}

/// Worst coordinate of a gradient comparison, by the same relative-error
/// rule the check itself applies.
fn worst_coordinate(report: &GradientReport) -> Option<(usize, f64, f64, f64)> {
    let mut worst: Option<(usize, f64, f64, f64)> = None;
    for (idx, (&a, &n)) in report.analytic.iter().zip(&report.numeric).enumerate() {
        let denom = a.abs().max(n.abs());
        if denom < 1e-6 {
            continue;
        }
        let rel = (a - n).abs() / denom;
        if worst.is_none_or(|(_, _, _, w)| rel > w) {
            worst = Some((idx, a, n, rel));
        }
    }
    worst
}

fn cmd_gradcheck(args: GradcheckArgs, file: &FileSettings, logger: Logger) -> Result<(), CliError> {
    let losses = match optional(args.loss, file, "loss")? {
        Some(label) => vec![parse_loss(&label)?],
        None => vec![LossKind::Rag, LossKind::Kl, LossKind::Ce],
    };
    let dim = setting(args.dim, file, "dim", 8)?;
    let pool = setting(args.pool, file, "pool", 6)?;
    let batch_size = setting(args.batch, file, "batch", 4)?;
    let seed: u64 = setting(args.seed, file, "seed", 0)?;
    let step = setting(args.step, file, "step", 1e-5)?;
    let threshold = setting(args.threshold, file, "threshold", 1e-4)?;
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(config_err(format!("threshold must be > 0, got {threshold}")));
    }

    let mut rows = Vec::with_capacity(losses.len());
    let mut failure: Option<String> = None;
    for loss in losses {
        let config = TrainingConfig { loss, seed, ..TrainingConfig::default() };
        let label = loss.label();
        let batch =
            random_batch(dim, pool, batch_size, derive_seed(seed, &format!("gradcheck-{label}")));
        let head = jittered_identity_head(dim, 0.05, derive_seed(seed, "gradcheck-head"))?;
        let mut report = gradient_check(&batch, &config, &head, step)?;
        if args.corrupt {
            // Negative control: break one analytic entry and recompute the
            // summary so the comparison must notice.
            report.analytic[0] += 1.0;
            report.max_rel_diff = worst_coordinate(&report).map(|(_, _, _, rel)| rel).unwrap_or(1.0);
        }
        let pass = report.max_rel_diff < threshold;
        let worst = worst_coordinate(&report);
        logger.info(
            "gradcheck_result",
            json!({
                "loss": label,
                "max_rel_diff": report.max_rel_diff,
                "max_abs_diff": report.max_abs_diff,
                "pass": pass,
            }),
        );
        if !pass && failure.is_none() {
            let detail = match worst {
                Some((idx, a, n, rel)) => format!(
                    "{label} gradient check failed: relative error {rel:.3e} at coordinate {idx} (analytic {a:.6e}, numeric {n:.6e})"
                ),
                None => format!("{label} gradient check failed with no comparable coordinates"),
            };
            failure = Some(detail);
        }
        rows.push(json!({
            "loss": label,
            "coordinates": report.analytic.len(),
            "max_abs_diff": report.max_abs_diff,
            "max_rel_diff": report.max_rel_diff,
            "worst_coordinate": worst.map(|(idx, a, n, rel)| json!({
                "index": idx, "analytic": a, "numeric": n, "relative_error": rel,
            })),
            "pass": pass,
        }));
    }
    let all_pass = failure.is_none();
    let summary = json!({ "threshold": threshold, "results": rows, "pass": all_pass });
    println!("{}", serde_json::to_string_pretty(&summary).expect("report serializes"));
    match failure {
        None => Ok(()),
        Some(detail) => Err(CliError::Runtime(anyhow!(detail))),
    }
}

// ─────────────────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    // === Config file parsing ===

    #[test]
    fn settings_parse_comments_blanks_and_values() {
        let file = parse_settings("# a comment\n\nk = 7\n  gamma =0.25\nloss= kl\n").unwrap();
        assert_eq!(file.get::<usize>("k").unwrap(), Some(7));
        assert_eq!(file.get::<f64>("gamma").unwrap(), Some(0.25));
        assert_eq!(file.get::<String>("loss").unwrap(), Some("kl".into()));
        assert_eq!(file.get::<usize>("epochs").unwrap(), None);
    }

    #[test]
    fn unknown_config_key_is_rejected_with_line_number() {
        let err = parse_settings("k = 5\nchunk_size = 9\n").unwrap_err();
        match err {
            CliError::Config(detail) => {
                assert!(detail.contains("line 2"), "{detail}");
                assert!(detail.contains("chunk_size"), "{detail}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_and_repeated_lines_are_rejected() {
        assert!(matches!(parse_settings("just words\n"), Err(CliError::Config(_))));
        assert!(matches!(parse_settings("k = 1\nk = 2\n"), Err(CliError::Config(_))));
    }

    #[test]
    fn unparseable_value_names_key_and_raw_text() {
        let file = parse_settings("epochs = soon\n").unwrap();
        match file.get::<usize>("epochs") {
            Err(CliError::Config(detail)) => {
                assert!(detail.contains("epochs"), "{detail}");
                assert!(detail.contains("soon"), "{detail}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    // === Precedence ===

    #[test]
    fn flag_overrides_file_overrides_default() {
        let file = parse_settings("k = 9\n").unwrap();
        assert_eq!(setting(Some(3usize), &file, "k", 5).unwrap(), 3);
        assert_eq!(setting(None::<usize>, &file, "k", 5).unwrap(), 9);
        assert_eq!(setting(None::<usize>, &file, "dim", 5).unwrap(), 5);
    }

    #[test]
    fn required_setting_reports_flag_and_key_names() {
        let file = FileSettings::default();
        match required(None::<PathBuf>, &file, "out_head") {
            Err(CliError::Config(detail)) => {
                assert!(detail.contains("--out-head"), "{detail}");
                assert!(detail.contains("out_head"), "{detail}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
        let from_file = parse_settings("out_head = head.json\n").unwrap();
        assert_eq!(
            required(None::<PathBuf>, &from_file, "out_head").unwrap(),
            PathBuf::from("head.json")
        );
    }

    // === Spec strings ===

    #[test]
    fn scorer_and_embedder_specs_parse_or_reject() {
        assert!(build_scorer("mock").is_ok());
        assert!(build_scorer("remote:http://127.0.0.1:1").is_ok());
        assert!(matches!(build_scorer("gpt4"), Err(CliError::Config(_))));
        assert!(build_provider("hash", 8).is_ok());
        assert!(build_provider("remote:http://127.0.0.1:1", 8).is_ok());
        assert!(matches!(build_provider("bert", 8), Err(CliError::Config(_))));
    }

    #[test]
    fn system_lists_parse_trim_and_reject_unknowns() {
        let systems = parse_systems("no_retrieval, adapcr").unwrap();
        assert_eq!(systems, vec![SystemKind::NoRetrieval, SystemKind::Adapcr]);
        assert!(matches!(parse_systems("adapcr,warp_drive"), Err(CliError::Config(_))));
        assert!(matches!(parse_systems("  ,"), Err(CliError::Config(_))));
    }

    // === Error classification ===

    #[test]
    fn module_errors_map_to_runtime_class() {
        let err: CliError = crate::corpus::CorpusError::DuplicateId {
            path: "corpus.jsonl".into(),
            line: 3,
            id: "p1".into(),
        }
        .into();
        assert!(matches!(err, CliError::Runtime(_)));
    }

    #[test]
    fn missing_config_file_is_a_config_error() {
        assert!(matches!(
            load_settings(Some(Path::new("/nonexistent/adapcr.conf"))),
            Err(CliError::Config(_))
        ));
        assert!(load_settings(None).unwrap().values.is_empty());
    }

    // === Gradient report summary ===

    #[test]
    fn worst_coordinate_skips_tiny_denominators() {
        let report = GradientReport {
            analytic: vec![1e-9, 1.0, 2.0],
            numeric: vec![5e-7, 1.1, 2.0],
            max_abs_diff: 0.1,
            max_rel_diff: 0.1,
        };
        let (idx, a, n, rel) = worst_coordinate(&report).unwrap();
        assert_eq!(idx, 1);
        assert_eq!((a, n), (1.0, 1.1));
        assert!((rel - 0.1 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn head_loading_rejects_contradictory_dim() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.json");
        ProjectionHead::identity(4).unwrap().save(&path).unwrap();
        assert!(load_head(Some(&path), Some(4), 256).is_ok());
        assert!(matches!(load_head(Some(&path), Some(8), 256), Err(CliError::Config(_))));
        assert_eq!(load_head(None, None, 16).unwrap().dim(), 16);
    }
}

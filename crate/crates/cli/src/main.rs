//! `huggr4`: ingest model cards, build indexes, select models, evaluate
//! methods and benchmark token use.
//!
//! Exit codes: 0 success; 2 invalid input data (cards beyond `--max-skip`,
//! dataset, index in `eval`/`bench-tokens`); 3 selection exhausted without an
//! answer; 4 selection could not run (index or provider failure); 64 usage or
//! config error.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use huggr4_core::card_store::{load_raw_cards, simplify_card_fallback, simplify_card_llm, CardCorpus, Provenance};
use huggr4_core::config::{parse_kv, PipelineConfig};
use huggr4_core::evaluation::{evaluate, load_requests, run_method, token_report, Method, RequestRecord, TokenRun};
use huggr4_core::index::{build_index, load_index, persist_index, DualIndex};
use huggr4_core::pipeline::{run_selection, OutcomeStatus, PipelineErrorKind, Providers, SelectionMode, UserQuery};
use huggr4_core::providers::{
    ChatProvider, Embedder, HashEmbedder, LexicalAgent, LiveChat, LiveEmbedder, ScriptedChat, TokenLedger,
    DEFAULT_DIMENSION,
};

const EXIT_DATA: u8 = 2;
const EXIT_EXHAUSTED: u8 = 3;
const EXIT_SELECT_FAILED: u8 = 4;
const EXIT_USAGE: u8 = 64;

const BENCH_QUERY: &str = "Could you perform a sentiment analysis on the tweets provided in ./tweets.txt?";

#[derive(Parser, Debug)]
#[command(name = "huggr4", version, about = "Reasoning-driven model selection over model hub cards")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simplify raw hub cards into a processed-corpus file.
    Ingest(IngestArgs),
    /// Embed a processed corpus into a dual-view index file.
    Index(IndexArgs),
    /// Select one model for a request.
    Select(SelectArgs),
    /// Score a method over an annotated request dataset.
    Eval(EvalArgs),
    /// Compare token use across corpus sizes.
    BenchTokens(BenchArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Raw cards, one JSON object per line.
    #[arg(long)]
    cards: PathBuf,
    /// Processed corpus to write.
    #[arg(long)]
    out: PathBuf,
    /// Simplify descriptions with the chat provider.
    #[arg(long, conflicts_with = "fallback")]
    llm: bool,
    /// Simplify offline by stripping links and truncating (default).
    #[arg(long)]
    fallback: bool,
    /// Malformed lines tolerated before failing.
    #[arg(long, default_value_t = 0)]
    max_skip: usize,
    /// Description budget in characters.
    #[arg(long, default_value_t = huggr4_core::card_store::DEFAULT_DESCRIPTION_CHARS)]
    max_chars: usize,
    #[command(flatten)]
    chat: ChatArgs,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum EmbedderKind {
    HashMock,
    Live,
}

#[derive(Args, Debug)]
struct IndexArgs {
    /// Processed corpus written by `ingest`.
    #[arg(long)]
    corpus: PathBuf,
    /// Index file to write.
    #[arg(long)]
    out: PathBuf,
    /// Embedding backend [default: hash-mock].
    #[arg(long, value_enum)]
    embedder: Option<EmbedderKind>,
    /// Dimension of the hash-mock embedder.
    #[arg(long, default_value_t = DEFAULT_DIMENSION)]
    dim: usize,
    /// `key = value` file; its `embedder` key applies when --embedder is absent.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ChatArgs {
    /// Chat provider: `script:PATH`, `heuristic` or `live`. Defaults to
    /// `script:$HR4_CHAT_SCRIPT` when that variable is set, else `live`.
    #[arg(long)]
    chat: Option<String>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    /// `key = value` settings; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus file; defaults to the one recorded in the index.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Refinement pool size N.
    #[arg(long)]
    pool_size: Option<usize>,
    /// Retrieval depth K.
    #[arg(long)]
    top_k: Option<usize>,
    /// Failure-tracing threshold in [0, 1].
    #[arg(long)]
    theta: Option<f64>,
    /// Rewritten queries generated per similarity search.
    #[arg(long)]
    multi_query_n: Option<usize>,
    /// Selection rounds before giving up.
    #[arg(long)]
    max_rounds: Option<u32>,
    /// Reasoning turns allowed in one round.
    #[arg(long)]
    max_turns_per_round: Option<u32>,
    #[command(flatten)]
    chat: ChatArgs,
}

#[derive(Args, Debug)]
struct SelectArgs {
    /// Index file written by `index`.
    #[arg(long)]
    index: PathBuf,
    /// The user request.
    #[arg(long)]
    query: String,
    /// Optional task category hint.
    #[arg(long)]
    task: Option<String>,
    /// Write the session trace here (JSON lines).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Accept the refinement choice without reflection.
    #[arg(long)]
    retrieval_only: bool,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Index file written by `index`.
    #[arg(long)]
    index: PathBuf,
    /// Annotated requests, one JSON object per line.
    #[arg(long)]
    dataset: PathBuf,
    /// `huggr4`, `huggr4-star` (no reflection) or `baseline`.
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Per-request records (JSON lines).
    #[arg(long, default_value = "records.jsonl")]
    records: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Index files, one per corpus size.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    index_set: Vec<PathBuf>,
    /// Methods to run, comma separated.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1.., value_parser = parse_method)]
    methods: Vec<Method>,
    /// CSV report path; the table goes to stdout.
    #[arg(long)]
    out: PathBuf,
    /// Request used for every run.
    #[arg(long, default_value = BENCH_QUERY)]
    query: String,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

/// A command failure carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait ExitWith<T> {
    fn exit_with(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn exit_with(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Index(args) => cmd_index(args),
        Command::Select(args) => cmd_select(args),
        Command::Eval(args) => cmd_eval(args),
        Command::BenchTokens(args) => cmd_bench_tokens(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure { code, error }) => {
            eprintln!("error: {}", describe(&error));
            ExitCode::from(code)
        }
    }
}

/// The error chain, skipping causes whose text a wrapper already includes.
fn describe(error: &anyhow::Error) -> String {
    let mut msg = error.to_string();
    for cause in error.chain().skip(1) {
        let text = cause.to_string();
        if !msg.contains(&text) {
            msg.push_str(": ");
            msg.push_str(&text);
        }
    }
    msg
}

enum Chat {
    Script(ScriptedChat),
    Heuristic(LexicalAgent),
    Live(LiveChat),
}

impl Chat {
    fn from_spec(spec: Option<&str>) -> Result<Self> {
        let env_script = std::env::var("HR4_CHAT_SCRIPT").ok().map(|p| format!("script:{p}"));
        let spec = spec.map(str::to_string).or(env_script).unwrap_or_else(|| "live".into());
        if let Some(path) = spec.strip_prefix("script:") {
            return Ok(Chat::Script(ScriptedChat::from_file(Path::new(path))?));
        }
        match spec.as_str() {
            "heuristic" => Ok(Chat::Heuristic(LexicalAgent::new())),
            "live" => Ok(Chat::Live(LiveChat::from_env()?)),
            other => Err(anyhow!("unknown chat provider {other:?} (expected script:PATH, heuristic or live)")),
        }
    }

    fn provider(&self) -> &dyn ChatProvider {
        match self {
            Chat::Script(c) => c,
            Chat::Heuristic(c) => c,
            Chat::Live(c) => c,
        }
    }

    /// Rewinds a script so every run replays it from the start.
    fn rewind(&self) {
        if let Chat::Script(c) = self {
            c.reset();
        }
    }
}

fn embedder_for(id: &str) -> Result<Box<dyn Embedder>> {
    if let Some(dim) = id.strip_prefix("hash-mock:") {
        let dim = dim.parse().with_context(|| format!("bad embedder id {id:?}"))?;
        return Ok(Box::new(HashEmbedder::new(dim)));
    }
    if id.starts_with("live:") {
        return Ok(Box::new(LiveEmbedder::from_env()?));
    }
    Err(anyhow!("unknown embedder {id:?} recorded in index"))
}

fn cmd_ingest(args: IngestArgs) -> Result<u8, Failure> {
    let raw = load_raw_cards(&args.cards).exit_with(EXIT_DATA)?;
    if raw.skipped.len() > args.max_skip {
        let (line, reason) = &raw.skipped[0];
        return Err(Failure {
            code: EXIT_DATA,
            error: anyhow!(
                "{} malformed lines exceed --max-skip {} (first at line {line}: {reason})",
                raw.skipped.len(),
                args.max_skip
            ),
        });
    }
    let chat = if args.llm { Some(Chat::from_spec(args.chat.chat.as_deref()).exit_with(EXIT_USAGE)?) } else { None };
    let mut ledger = TokenLedger::new();
    let mut cards = Vec::with_capacity(raw.cards.len());
    for card in &raw.cards {
        let processed = match &chat {
            Some(chat) => simplify_card_llm(card, chat.provider(), args.max_chars, &mut ledger).unwrap_or_else(|e| {
                log::warn!("{e}; using offline simplification");
                simplify_card_fallback(card, args.max_chars)
            }),
            None => simplify_card_fallback(card, args.max_chars),
        };
        cards.push(processed);
    }
    let corpus = CardCorpus::new(cards);
    if corpus.len() < raw.cards.len() {
        log::warn!("{} duplicate card ids dropped", raw.cards.len() - corpus.len());
    }
    corpus.write(&args.out).exit_with(EXIT_DATA)?;
    let count = |p: Provenance| corpus.cards().iter().filter(|c| c.provenance == p).count();
    println!("total {}", corpus.len());
    println!("llm_simplified {}", count(Provenance::LlmSimplified));
    println!("fallback {}", count(Provenance::FallbackSimplified));
    println!("skipped {}", raw.skipped.len());
    Ok(0)
}

fn read_settings(path: Option<&Path>) -> Result<Vec<(String, String)>> {
    let Some(path) = path else { return Ok(Vec::new()) };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_kv(&text)?)
}

fn cmd_index(args: IndexArgs) -> Result<u8, Failure> {
    let settings = read_settings(args.config.as_deref()).exit_with(EXIT_USAGE)?;
    let mut kind = EmbedderKind::HashMock;
    for (key, value) in &settings {
        if key == "embedder" {
            kind = EmbedderKind::from_str(value, true)
                .map_err(|e| anyhow!("config embedder: {e}"))
                .exit_with(EXIT_USAGE)?;
        }
    }
    let kind = args.embedder.unwrap_or(kind);
    let corpus = CardCorpus::load(&args.corpus).exit_with(EXIT_DATA)?;
    let embedder: Box<dyn Embedder> = match kind {
        EmbedderKind::HashMock => Box::new(HashEmbedder::new(args.dim)),
        EmbedderKind::Live => Box::new(LiveEmbedder::from_env().exit_with(EXIT_USAGE)?),
    };
    let mut index = build_index(&corpus, embedder.as_ref()).exit_with(EXIT_DATA)?;
    let corpus_path = fs::canonicalize(&args.corpus).unwrap_or_else(|_| args.corpus.clone());
    index.set_corpus_path(Some(corpus_path.display().to_string()));
    persist_index(&index, &args.out).exit_with(EXIT_DATA)?;
    let m = index.manifest();
    println!("cards {}", m.card_count);
    println!("dimension {}", m.dimension);
    println!("embedder {}", m.embedder_id);
    println!("checksum {}", m.checksum);
    Ok(0)
}

/// Config file first, then explicit flags.
fn pipeline_config(args: &PipelineArgs) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::default();
    for (key, value) in read_settings(args.config.as_deref())? {
        if !config.apply(&key, &value)? && key != "embedder" {
            return Err(anyhow!("unknown config key {key:?}"));
        }
    }
    if let Some(v) = args.pool_size {
        config.pool_size = v;
    }
    if let Some(v) = args.top_k {
        config.top_k = v;
    }
    if let Some(v) = args.theta {
        config.theta = v;
    }
    if let Some(v) = args.multi_query_n {
        config.multi_query_n = v;
    }
    if let Some(v) = args.max_rounds {
        config.max_rounds = v;
    }
    if let Some(v) = args.max_turns_per_round {
        config.max_turns_per_round = v;
    }
    config.validate()?;
    Ok(config)
}

/// An index with its corpus and query embedder.
struct Loaded {
    index: DualIndex,
    corpus: CardCorpus,
    embedder: Box<dyn Embedder>,
}

fn load_all(index_path: &Path, corpus_override: Option<&Path>) -> Result<Loaded> {
    let (index, _) = load_index(index_path, None)?;
    let corpus_path = match (corpus_override, &index.manifest().corpus_path) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => return Err(anyhow!("index records no corpus file; pass --corpus")),
    };
    let corpus = CardCorpus::load(&corpus_path)?;
    let missing: Vec<&str> =
        index.records().iter().map(|r| r.model_id.as_str()).filter(|id| !corpus.contains(id)).collect();
    if !missing.is_empty() || corpus.len() != index.len() {
        return Err(anyhow!(
            "corpus {} does not match the index ({} cards vs {} records, {} ids missing)",
            corpus_path.display(),
            corpus.len(),
            index.len(),
            missing.len()
        ));
    }
    let embedder = embedder_for(&index.manifest().embedder_id)?;
    Ok(Loaded { index, corpus, embedder })
}

fn cmd_select(args: SelectArgs) -> Result<u8, Failure> {
    let config = pipeline_config(&args.pipeline).exit_with(EXIT_USAGE)?;
    let loaded = load_all(&args.index, args.pipeline.corpus.as_deref()).exit_with(EXIT_SELECT_FAILED)?;
    let chat = Chat::from_spec(args.pipeline.chat.chat.as_deref()).exit_with(EXIT_SELECT_FAILED)?;
    let mut query = UserQuery::new(&args.query);
    if let Some(task) = &args.task {
        query = query.with_category(task);
    }
    let mode = if args.retrieval_only { SelectionMode::RetrievalOnly } else { SelectionMode::Full };
    let providers = Providers { chat: chat.provider(), embedder: loaded.embedder.as_ref() };
    let result = run_selection(&query, &loaded.corpus, &loaded.index, providers, &config, mode);
    let (outcome, error) = match result {
        Ok(outcome) => (outcome, None),
        Err(e) => {
            let code = match e.kind {
                PipelineErrorKind::EmptyQuery | PipelineErrorKind::Config(_) => EXIT_USAGE,
                _ => EXIT_SELECT_FAILED,
            };
            (*e.partial, Some(Failure { code, error: anyhow!(e.kind) }))
        }
    };
    if let Some(path) = &args.trace {
        outcome
            .trace
            .write(path)
            .with_context(|| format!("writing {}", path.display()))
            .exit_with(EXIT_SELECT_FAILED)?;
    }
    if let Some(failure) = error {
        return Err(failure);
    }
    log::info!("rounds used {}, tokens {}", outcome.rounds_used, outcome.token_usage.total());
    match outcome.status {
        OutcomeStatus::Selected => {
            println!("{}", outcome.model_id.unwrap_or_default());
            Ok(0)
        }
        _ => {
            println!("UNCERTAIN-EXHAUSTED");
            Ok(EXIT_EXHAUSTED)
        }
    }
}

fn cmd_eval(args: EvalArgs) -> Result<u8, Failure> {
    let config = pipeline_config(&args.pipeline).exit_with(EXIT_USAGE)?;
    let requests = load_requests(&args.dataset).exit_with(EXIT_DATA)?;
    let loaded = load_all(&args.index, args.pipeline.corpus.as_deref()).exit_with(EXIT_DATA)?;
    let absent: BTreeSet<&str> = requests
        .iter()
        .flat_map(|r| r.workable.iter())
        .map(String::as_str)
        .filter(|id| !loaded.corpus.contains(id))
        .collect();
    if !absent.is_empty() {
        log::warn!("{} labelled models are not in the corpus; they can never be selected", absent.len());
    }
    let chat = Chat::from_spec(args.pipeline.chat.chat.as_deref()).exit_with(EXIT_USAGE)?;
    let providers = Providers { chat: chat.provider(), embedder: loaded.embedder.as_ref() };
    let mut outcomes = Vec::with_capacity(requests.len());
    for req in &requests {
        let mut query = UserQuery::new(&req.request);
        if let Some(task) = &req.task_category {
            query = query.with_category(task);
        }
        let outcome = run_method(args.method, &query, &loaded.corpus, &loaded.index, providers, &config);
        log::info!("{}: {} {:?}", req.id, outcome.status.as_str(), outcome.model_id);
        outcomes.push(outcome);
    }
    let metrics = evaluate(&outcomes, &requests).exit_with(EXIT_DATA)?;

    let mut records = String::new();
    for ((req, outcome), result) in requests.iter().zip(&outcomes).zip(&metrics.per_request) {
        let record = RequestRecord {
            id: &req.id,
            request: &req.request,
            method: args.method,
            status: outcome.status,
            model_id: outcome.model_id.as_deref(),
            workable: result.workable,
            reasonable: result.reasonable,
            rounds_used: outcome.rounds_used,
            prompt_tokens: outcome.token_usage.prompt_tokens(),
            completion_tokens: outcome.token_usage.completion_tokens(),
        };
        let _ = writeln!(records, "{}", serde_json::to_string(&record).expect("records serialize"));
    }
    fs::write(&args.records, records)
        .with_context(|| format!("writing {}", args.records.display()))
        .exit_with(EXIT_DATA)?;

    println!("method {}", args.method.as_str());
    println!("requests {}", metrics.n_requests);
    println!("selected {}", metrics.n_selected);
    println!("workability {:.4} ({}/{})", metrics.workability, metrics.n_workable, metrics.n_requests);
    println!("reasonability {:.4} ({}/{})", metrics.reasonability, metrics.n_reasonable, metrics.n_requests);
    Ok(0)
}

fn cmd_bench_tokens(args: BenchArgs) -> Result<u8, Failure> {
    let config = pipeline_config(&args.pipeline).exit_with(EXIT_USAGE)?;
    let chat = Chat::from_spec(args.pipeline.chat.chat.as_deref()).exit_with(EXIT_USAGE)?;
    let query = UserQuery::new(&args.query);
    let mut runs = Vec::new();
    for path in &args.index_set {
        let loaded = load_all(path, None).with_context(|| format!("index {}", path.display())).exit_with(EXIT_DATA)?;
        let providers = Providers { chat: chat.provider(), embedder: loaded.embedder.as_ref() };
        for &method in &args.methods {
            chat.rewind();
            let outcome = run_method(method, &query, &loaded.corpus, &loaded.index, providers, &config);
            if outcome.status == OutcomeStatus::Error {
                log::warn!("{} on {}: run ended in error", method.as_str(), path.display());
            }
            runs.push(TokenRun {
                method: method.as_str().to_string(),
                corpus_size: loaded.corpus.len(),
                ledger: outcome.token_usage,
            });
        }
    }
    let report = token_report(&runs);
    fs::write(&args.out, report.to_csv())
        .with_context(|| format!("writing {}", args.out.display()))
        .exit_with(EXIT_DATA)?;
    print!("{}", report.to_table());
    Ok(0)
}

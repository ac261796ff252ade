//! Annotated request datasets, workability/reasonability scoring, the
//! truncated-listing baseline and token reports.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::card_store::CardCorpus;
use crate::config::PipelineConfig;
use crate::index::DualIndex;
use crate::pipeline::{
    run_selection, OutcomeStatus, Providers, SelectionMode, SelectionOutcome, Trace, TraceRole, UserQuery,
};
use crate::prompts;
use crate::providers::{complete_and_record, ChatProvider, ChatRequest, ChatTurn, Stage, Temperature, TokenLedger};
use crate::tool_protocol::{parse_boxed, Boxed};

pub const DEFAULT_TRUNCATION: usize = 100;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset line {line}: {reason}")]
    MalformedDataset { line: usize, reason: String },
    #[error("{outcomes} outcomes for {requests} requests")]
    LengthMismatch { outcomes: usize, requests: usize },
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EvalRequest {
    pub id: String,
    pub request: String,
    pub task_category: Option<String>,
    pub workable: BTreeSet<String>,
    pub reasonable: BTreeSet<String>,
}

#[derive(Deserialize)]
struct RawRequest {
    #[serde(default)]
    id: Option<String>,
    request: String,
    #[serde(default)]
    task: Option<String>,
    #[serde(rename = "Task_label")]
    task_label: RawLabel,
}

#[derive(Deserialize)]
struct RawLabel {
    #[serde(default)]
    workable: Vec<String>,
    #[serde(default)]
    reasonable: Vec<String>,
}

pub fn load_requests(path: &Path) -> Result<Vec<EvalRequest>, EvalError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
    parse_requests(&text)
}

/// One request per non-blank line. Reasonable labels outside the workable
/// set are dropped with a warning. Requests without an `id` are numbered by
/// line.
pub fn parse_requests(text: &str) -> Result<Vec<EvalRequest>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRequest = serde_json::from_str(line)
            .map_err(|e| EvalError::MalformedDataset { line: i + 1, reason: e.to_string() })?;
        if raw.request.trim().is_empty() {
            return Err(EvalError::MalformedDataset { line: i + 1, reason: "empty request".into() });
        }
        let workable: BTreeSet<String> = raw.task_label.workable.into_iter().map(|s| s.trim().to_string()).collect();
        let mut reasonable: BTreeSet<String> =
            raw.task_label.reasonable.into_iter().map(|s| s.trim().to_string()).collect();
        let outside: Vec<String> = reasonable.difference(&workable).cloned().collect();
        if !outside.is_empty() {
            log::warn!("line {}: reasonable labels {outside:?} are not workable; dropping them", i + 1);
            reasonable.retain(|id| workable.contains(id));
        }
        out.push(EvalRequest {
            id: raw.id.unwrap_or_else(|| format!("req-{:03}", i + 1)),
            request: raw.request,
            task_category: raw.task,
            workable,
            reasonable,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RequestResult {
    pub id: String,
    pub status: OutcomeStatus,
    pub model_id: Option<String>,
    pub workable: bool,
    pub reasonable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub workability: f64,
    pub reasonability: f64,
    pub n_requests: usize,
    pub n_selected: usize,
    pub n_workable: usize,
    pub n_reasonable: usize,
    pub per_request: Vec<RequestResult>,
}

/// Scores outcomes against their requests. Anything other than a selection
/// counts as a miss on both metrics.
pub fn evaluate(outcomes: &[SelectionOutcome], requests: &[EvalRequest]) -> Result<Metrics, EvalError> {
    let selections: Vec<(OutcomeStatus, Option<&str>)> =
        outcomes.iter().map(|o| (o.status, o.model_id.as_deref())).collect();
    evaluate_selections(&selections, requests)
}

pub fn evaluate_selections(
    selections: &[(OutcomeStatus, Option<&str>)],
    requests: &[EvalRequest],
) -> Result<Metrics, EvalError> {
    if selections.len() != requests.len() {
        return Err(EvalError::LengthMismatch { outcomes: selections.len(), requests: requests.len() });
    }
    let mut per_request = Vec::with_capacity(requests.len());
    for ((status, model), req) in selections.iter().zip(requests) {
        let chosen = model.filter(|_| *status == OutcomeStatus::Selected);
        per_request.push(RequestResult {
            id: req.id.clone(),
            status: *status,
            model_id: model.map(str::to_string),
            workable: chosen.is_some_and(|m| req.workable.contains(m)),
            reasonable: chosen.is_some_and(|m| req.reasonable.contains(m)),
        });
    }
    let n = requests.len();
    let n_workable = per_request.iter().filter(|r| r.workable).count();
    let n_reasonable = per_request.iter().filter(|r| r.reasonable).count();
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    Ok(Metrics {
        workability: frac(n_workable),
        reasonability: frac(n_reasonable),
        n_requests: n,
        n_selected: per_request.iter().filter(|r| r.status == OutcomeStatus::Selected).count(),
        n_workable,
        n_reasonable,
        per_request,
    })
}

/// Card lines for the baseline prompt: `id: <first chars of description>`.
pub fn baseline_lines(corpus: &CardCorpus, truncation: usize) -> Vec<String> {
    corpus
        .cards()
        .iter()
        .map(|c| {
            let desc: String = c.simplified_description.chars().take(truncation).collect();
            format!("{}: {}", c.id, desc.trim_end())
        })
        .collect()
}

/// Single-prompt selection over every card, each truncated to `truncation`
/// description characters. Provider failures become `error` outcomes.
pub fn baseline_direct_select(
    query: &UserQuery,
    corpus: &CardCorpus,
    chat: &dyn ChatProvider,
    truncation: usize,
) -> SelectionOutcome {
    let mut ledger = TokenLedger::new();
    let mut trace = Trace::new();
    let user = prompts::baseline_user(&query.text, &baseline_lines(corpus, truncation));
    trace.push(1, Stage::Baseline, TraceRole::System, prompts::BASELINE_SYSTEM);
    trace.push(1, Stage::Baseline, TraceRole::User, user.clone());
    let request =
        ChatRequest::new(vec![ChatTurn::system(prompts::BASELINE_SYSTEM), ChatTurn::user(user)], Temperature::ZERO);
    let reply = match complete_and_record(chat, &request, Stage::Baseline, &mut ledger) {
        Ok(r) => r,
        Err(e) => {
            trace.push(1, Stage::Baseline, TraceRole::Event, format!("provider error: {e}"));
            return SelectionOutcome::bare(OutcomeStatus::Error, None, ledger, trace);
        }
    };
    trace.push_reply(1, Stage::Baseline, &reply);
    let (status, model) = match parse_boxed(&reply.text) {
        Boxed::Model(id) if corpus.contains(&id) => (OutcomeStatus::Selected, Some(id)),
        Boxed::Model(id) => {
            trace.push(1, Stage::Baseline, TraceRole::Event, format!("{id} is not in the corpus"));
            (OutcomeStatus::Error, Some(id))
        }
        Boxed::Uncertain => (OutcomeStatus::ExhaustedUncertain, None),
        Boxed::None => {
            trace.push(1, Stage::Baseline, TraceRole::Event, "no boxed answer");
            (OutcomeStatus::Error, None)
        }
    };
    SelectionOutcome::bare(status, model, ledger, trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    #[serde(rename = "huggr4")]
    Huggr4,
    #[serde(rename = "huggr4-star")]
    Huggr4Star,
    #[serde(rename = "baseline")]
    Baseline,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Huggr4, Method::Huggr4Star, Method::Baseline];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Huggr4 => "huggr4",
            Method::Huggr4Star => "huggr4-star",
            Method::Baseline => "baseline",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method {s:?} (expected huggr4, huggr4-star or baseline)"))
    }
}

/// Runs one request with `method`. Pipeline failures are returned as their
/// partial `error` outcome.
pub fn run_method(
    method: Method,
    query: &UserQuery,
    corpus: &CardCorpus,
    index: &DualIndex,
    providers: Providers<'_>,
    config: &PipelineConfig,
) -> SelectionOutcome {
    let mode = match method {
        Method::Huggr4 => SelectionMode::Full,
        Method::Huggr4Star => SelectionMode::RetrievalOnly,
        Method::Baseline => return baseline_direct_select(query, corpus, providers.chat, DEFAULT_TRUNCATION),
    };
    match run_selection(query, corpus, index, providers, config, mode) {
        Ok(outcome) => outcome,
        Err(e) => *e.partial,
    }
}

/// One line of the per-request record file.
#[derive(Debug, Clone, Serialize)]
pub struct RequestRecord<'a> {
    pub id: &'a str,
    pub request: &'a str,
    pub method: Method,
    pub status: OutcomeStatus,
    pub model_id: Option<&'a str>,
    pub workable: bool,
    pub reasonable: bool,
    pub rounds_used: u32,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenRun {
    pub method: String,
    pub corpus_size: usize,
    pub ledger: TokenLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub method: String,
    pub corpus_size: usize,
    pub runs: usize,
    pub prompt_tokens: f64,
    pub completion_tokens: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TokenReport {
    pub rows: Vec<ReportRow>,
}

/// Mean tokens per (method, corpus size). Methods keep first-seen order;
/// sizes ascend within a method.
pub fn token_report(runs: &[TokenRun]) -> TokenReport {
    let mut methods: Vec<&str> = Vec::new();
    for r in runs {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut rows = Vec::new();
    for method in methods {
        let sizes: BTreeSet<usize> = runs.iter().filter(|r| r.method == method).map(|r| r.corpus_size).collect();
        for size in sizes {
            let group: Vec<&TokenRun> = runs.iter().filter(|r| r.method == method && r.corpus_size == size).collect();
            let n = group.len() as f64;
            let prompt: u64 = group.iter().map(|r| r.ledger.prompt_tokens()).sum();
            let completion: u64 = group.iter().map(|r| r.ledger.completion_tokens()).sum();
            rows.push(ReportRow {
                method: method.to_string(),
                corpus_size: size,
                runs: group.len(),
                prompt_tokens: prompt as f64 / n,
                completion_tokens: completion as f64 / n,
                total: (prompt + completion) as f64 / n,
            });
        }
    }
    TokenReport { rows }
}

impl TokenReport {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Aligned text table.
    pub fn to_table(&self) -> String {
        let header = ["method", "corpus_size", "runs", "prompt_tokens", "completion_tokens", "total"];
        let cells: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.method.clone(),
                    r.corpus_size.to_string(),
                    r.runs.to_string(),
                    format!("{:.1}", r.prompt_tokens),
                    format!("{:.1}", r.completion_tokens),
                    format!("{:.1}", r.total),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let mut line = |cols: Vec<&str>| {
            let parts: Vec<String> = cols
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(header.to_vec());
        for row in &cells {
            line(row.iter().map(String::as_str).collect());
        }
        out
    }

    /// `method,corpus_size,prompt_tokens,completion_tokens,total` records
    /// with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,corpus_size,prompt_tokens,completion_tokens,total\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.1},{:.1},{:.1}",
                r.method, r.corpus_size, r.prompt_tokens, r.completion_tokens, r.total
            );
        }
        out
    }
}

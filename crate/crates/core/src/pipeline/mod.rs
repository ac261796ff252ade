//! The selection loop: reasoning turns with retrieval tools, refinement over
//! full cards, reflection, and freeze-and-slide retries.

mod trace;
mod window;

use indexmap::IndexSet;
use serde::Serialize;
use thiserror::Error;

use crate::card_store::CardCorpus;
use crate::config::{ConfigError, PipelineConfig};
use crate::index::{DualIndex, IndexError};
use crate::prompts;
use crate::providers::{
    complete_and_record, ChatProvider, ChatRequest, ChatResponse, ChatTurn, Embedder, ProviderError, Stage,
    Temperature, TokenLedger,
};
use crate::retrieval::{execute_retrieval, update_candidates, CandidateSet, RetrievalContext, RetrievalError};
use crate::tool_protocol::{parse_actions, parse_boxed, ActionKind, Boxed, ParsedTurn, ToolAction, ToolTag};

pub use trace::{Trace, TraceRecord, TraceRole};
pub use window::{WindowExhausted, WindowState};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserQuery {
    pub text: String,
    pub task_category: Option<String>,
}

impl UserQuery {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into(), task_category: None }
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.task_category = Some(category.into());
        self
    }
}

/// `Full` runs reflection; `RetrievalOnly` accepts the refinement choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionMode {
    #[default]
    Full,
    RetrievalOnly,
}

#[derive(Clone, Copy)]
pub struct Providers<'a> {
    pub chat: &'a dyn ChatProvider,
    pub embedder: &'a dyn Embedder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Selected,
    ExhaustedUncertain,
    Error,
}

impl OutcomeStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            OutcomeStatus::Selected => "selected",
            OutcomeStatus::ExhaustedUncertain => "exhausted_uncertain",
            OutcomeStatus::Error => "error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundVerdict {
    Accepted,
    Rejected,
    NoCandidates,
}

/// What one sliding-window round produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoundSummary {
    pub round: u32,
    pub turns: u32,
    pub pool: Vec<String>,
    pub selected: Option<String>,
    pub verdict: RoundVerdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub status: OutcomeStatus,
    pub model_id: Option<String>,
    pub rounds_used: u32,
    pub token_usage: TokenLedger,
    /// The conversation as sent to the reasoning model.
    pub history: Vec<ChatTurn>,
    pub trace: Trace,
    pub rounds: Vec<RoundSummary>,
    pub frozen: Vec<String>,
}

impl SelectionOutcome {
    /// An outcome with no session behind it, e.g. for a baseline run.
    pub fn bare(status: OutcomeStatus, model_id: Option<String>, token_usage: TokenLedger, trace: Trace) -> Self {
        Self {
            status,
            model_id,
            rounds_used: 1,
            token_usage,
            history: Vec::new(),
            trace,
            rounds: Vec::new(),
            frozen: Vec::new(),
        }
    }

    pub fn selected(&self) -> Option<&str> {
        match self.status {
            OutcomeStatus::Selected => self.model_id.as_deref(),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineErrorKind {
    #[error("{stage} call failed: {source}")]
    Provider { stage: Stage, source: ProviderError },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("{stage}: {message}")]
    Protocol { stage: Stage, message: String },
    #[error("query text is empty")]
    EmptyQuery,
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error)]
#[error("{kind}")]
pub struct PipelineError {
    pub kind: PipelineErrorKind,
    /// Session state up to the failure, with status `error`.
    pub partial: Box<SelectionOutcome>,
}

/// Runs one user query through the full loop.
pub fn run_selection(
    query: &UserQuery,
    corpus: &CardCorpus,
    index: &DualIndex,
    providers: Providers<'_>,
    config: &PipelineConfig,
    mode: SelectionMode,
) -> Result<SelectionOutcome, PipelineError> {
    let ctx = RetrievalContext { corpus, index, embedder: providers.embedder, chat: providers.chat, config };
    let mut session = Session::new(query, ctx, mode);
    let result = if query.text.trim().is_empty() {
        Err(PipelineErrorKind::EmptyQuery)
    } else {
        config.validate().map_err(PipelineErrorKind::from).and_then(|_| session.run())
    };
    match result {
        Ok(end) => Ok(session.finish(end)),
        Err(kind) => {
            log::warn!("selection failed: {kind}");
            let partial = Box::new(session.finish(SessionEnd::Error));
            Err(PipelineError { kind, partial })
        }
    }
}

enum SessionEnd {
    Selected(String),
    Exhausted,
    Error,
}

enum RoundEnd {
    Accepted(String),
    Rejected,
    NoCandidates,
}

enum Refined {
    Chosen(String),
    Uncertain,
}

struct Session<'a> {
    query: &'a UserQuery,
    ctx: RetrievalContext<'a>,
    mode: SelectionMode,
    history: Vec<ChatTurn>,
    trace: Trace,
    ledger: TokenLedger,
    window: WindowState,
    rounds: Vec<RoundSummary>,
}

type Step<T> = Result<T, PipelineErrorKind>;

impl<'a> Session<'a> {
    fn new(query: &'a UserQuery, ctx: RetrievalContext<'a>, mode: SelectionMode) -> Self {
        let window = WindowState::new(ctx.corpus.len(), ctx.config.max_rounds);
        Self {
            query,
            ctx,
            mode,
            history: Vec::new(),
            trace: Trace::new(),
            ledger: TokenLedger::new(),
            window,
            rounds: Vec::new(),
        }
    }

    fn finish(self, end: SessionEnd) -> SelectionOutcome {
        let (status, model_id) = match end {
            SessionEnd::Selected(id) => (OutcomeStatus::Selected, Some(id)),
            SessionEnd::Exhausted => (OutcomeStatus::ExhaustedUncertain, None),
            SessionEnd::Error => (OutcomeStatus::Error, None),
        };
        SelectionOutcome {
            status,
            model_id,
            rounds_used: (self.rounds.len() as u32).max(1),
            token_usage: self.ledger,
            history: self.history,
            trace: self.trace,
            rounds: self.rounds,
            frozen: self.window.frozen.into_iter().collect(),
        }
    }

    fn round(&self) -> u32 {
        self.window.round
    }

    fn event(&mut self, stage: Stage, text: impl Into<String>) {
        let text = text.into();
        log::debug!("round {} {stage}: {text}", self.round());
        self.trace.push(self.round(), stage, TraceRole::Event, text);
    }

    fn push_turn(&mut self, stage: Stage, turn: ChatTurn) {
        self.trace.push(self.round(), stage, turn.role.into(), turn.content.clone());
        self.history.push(turn);
    }

    /// Sends the current history. The reply is traced but not appended.
    fn call(&mut self, stage: Stage, temperature: Temperature) -> Step<ChatResponse> {
        let request = ChatRequest::new(self.history.clone(), temperature);
        let reply = complete_and_record(self.ctx.chat, &request, stage, &mut self.ledger)
            .map_err(|source| PipelineErrorKind::Provider { stage, source })?;
        self.trace.push_reply(self.round(), stage, &reply);
        Ok(reply)
    }

    fn run(&mut self) -> Step<SessionEnd> {
        let config = self.ctx.config;
        self.push_turn(
            Stage::Reasoning,
            ChatTurn::system(prompts::main_prompt(&self.query.text, config.pool_size, config.top_k)),
        );
        self.push_turn(
            Stage::Reasoning,
            ChatTurn::user(prompts::opening_message(&self.query.text, self.query.task_category.as_deref())),
        );
        loop {
            match self.run_round()? {
                RoundEnd::Accepted(id) => return Ok(SessionEnd::Selected(id)),
                RoundEnd::NoCandidates => return Ok(SessionEnd::Exhausted),
                RoundEnd::Rejected => {
                    let mut rejected = self.window.refinement_pool.clone();
                    if let Some(id) = &self.window.selected {
                        if !rejected.contains(id) {
                            rejected.push(id.clone());
                        }
                    }
                    if let Err(exhausted) = self.window.freeze_and_slide() {
                        self.event(Stage::Reflection, format!("window exhausted: {exhausted}"));
                        return Ok(SessionEnd::Exhausted);
                    }
                    let frozen: Vec<&str> = self.window.frozen.iter().map(String::as_str).collect();
                    let note = format!("frozen [{}]; starting round {}", frozen.join(", "), self.round());
                    self.event(Stage::Reflection, note);
                    self.push_turn(Stage::Reasoning, ChatTurn::user(prompts::reflection_failure(&rejected)));
                }
            }
        }
    }

    fn run_round(&mut self) -> Step<RoundEnd> {
        let config = self.ctx.config;
        let mut candidates: Option<CandidateSet> = None;
        // Every id a trusted retrieval returned this round.
        let mut seen: IndexSet<String> = IndexSet::new();
        for turn in 1..=config.max_turns_per_round {
            let parsed = self.reason_turn()?;
            let mut blocks = Vec::new();
            let mut pool = None;
            for action in &parsed.actions {
                match action.kind {
                    kind if kind.is_retrieval() => {
                        let block = self.retrieve(action, &mut candidates, &mut seen)?;
                        blocks.push(block);
                    }
                    ActionKind::FetchDescriptions => match self.validate_pool(action, &seen) {
                        Ok(ids) => {
                            pool = Some(ids);
                            break;
                        }
                        Err(message) => {
                            self.event(Stage::Reasoning, format!("descriptions request refused: {message}"));
                            blocks.push(descriptions_refusal(&message));
                        }
                    },
                    _ => self.event(Stage::Reasoning, "boxed answer during reasoning ignored"),
                }
            }
            let candidate_ids = candidates.as_ref().map(CandidateSet::ids).unwrap_or_default();
            if pool.is_none() && !candidate_ids.is_empty() && candidate_ids.len() <= config.pool_size {
                self.event(Stage::Reasoning, format!("{} candidates left; moving to refinement", candidate_ids.len()));
                pool = Some(candidate_ids.clone());
            }
            if pool.is_none() && turn == config.max_turns_per_round {
                if candidate_ids.is_empty() {
                    self.event(Stage::Reasoning, "turn budget spent with no candidates");
                    self.rounds.push(RoundSummary {
                        round: self.round(),
                        turns: turn,
                        pool: Vec::new(),
                        selected: None,
                        verdict: RoundVerdict::NoCandidates,
                    });
                    return Ok(RoundEnd::NoCandidates);
                }
                self.event(Stage::Reasoning, "turn budget spent; refining the top candidates");
                pool = Some(candidate_ids.iter().take(config.pool_size).cloned().collect());
            }

            let mut message =
                if parsed.actions.is_empty() { prompts::NO_TOOL_CALL.to_string() } else { blocks.join("\n\n") };
            if !candidate_ids.is_empty() {
                message.push_str("\n\n");
                message.push_str(&prompts::candidates_line(&candidate_ids));
            }
            let Some(pool) = pool else {
                self.push_turn(Stage::Reasoning, ChatTurn::user(message.trim_start().to_string()));
                continue;
            };
            return self.finish_round(turn, message, pool);
        }
        unreachable!("the last turn always ends the round")
    }

    fn finish_round(&mut self, turns: u32, message: String, pool: Vec<String>) -> Step<RoundEnd> {
        self.window.set_pool(pool.clone());
        let refined = self.refine(message, &pool)?;
        let (selected, verdict) = match refined {
            Refined::Uncertain => (None, RoundVerdict::Rejected),
            Refined::Chosen(id) => {
                let accepted = match self.mode {
                    SelectionMode::RetrievalOnly => true,
                    SelectionMode::Full => self.reflect(&id)?,
                };
                (Some(id), if accepted { RoundVerdict::Accepted } else { RoundVerdict::Rejected })
            }
        };
        self.window.select(selected.clone());
        self.rounds.push(RoundSummary { round: self.round(), turns, pool, selected: selected.clone(), verdict });
        Ok(match (verdict, selected) {
            (RoundVerdict::Accepted, Some(id)) => RoundEnd::Accepted(id),
            _ => RoundEnd::Rejected,
        })
    }

    /// One reasoning call; a reply with an unterminated tag is retried once.
    fn reason_turn(&mut self) -> Step<ParsedTurn> {
        let mut last_error = String::new();
        for attempt in 0..2 {
            let reply = self.call(Stage::Reasoning, Temperature::ProviderDefault)?;
            match parse_actions(&reply.text) {
                Ok(parsed) => {
                    self.history.push(ChatTurn::assistant(reply.text));
                    return Ok(parsed);
                }
                Err(e) => {
                    last_error = e.to_string();
                    let retry = if attempt == 0 { "; retrying" } else { "" };
                    self.event(Stage::Reasoning, format!("unparseable reply: {e}{retry}"));
                }
            }
        }
        Err(PipelineErrorKind::Protocol { stage: Stage::Reasoning, message: last_error })
    }

    /// Runs a retrieval action and folds trusted hits into the candidates.
    fn retrieve(
        &mut self,
        action: &ToolAction,
        candidates: &mut Option<CandidateSet>,
        seen: &mut IndexSet<String>,
    ) -> Step<String> {
        let before = self.ledger.stage(Stage::MultiQuery);
        let frozen = self.window.frozen_set();
        let outcome = execute_retrieval(action, &self.ctx, &frozen, &mut self.ledger).map_err(|e| match e {
            RetrievalError::Provider(source) => PipelineErrorKind::Provider { stage: Stage::MultiQuery, source },
            RetrievalError::Index(e) => PipelineErrorKind::Index(e),
            RetrievalError::NotRetrieval(kind) => {
                PipelineErrorKind::Protocol { stage: Stage::Reasoning, message: format!("{kind:?} is not a retrieval") }
            }
        })?;
        if let Some(bundle) = &outcome.bundle {
            let after = self.ledger.stage(Stage::MultiQuery);
            self.trace.push_with_tokens(
                self.round(),
                Stage::MultiQuery,
                TraceRole::Assistant,
                bundle.variants.join("\n"),
                after.prompt_tokens - before.prompt_tokens,
                after.completion_tokens - before.completion_tokens,
            );
        }
        if let Some(check) = outcome.trace {
            let verdict = if outcome.trusted() { "trusted" } else { "untrusted" };
            let overlap_pct = (check.overlap * 100.0).round() as u32;
            self.event(Stage::Reasoning, format!("failure trace: overlap {overlap_pct}% {verdict}"));
        }
        if outcome.trusted() && !outcome.hits.is_empty() {
            let update = update_candidates(candidates.as_ref(), &outcome.hits, self.round());
            if update.reset {
                self.event(Stage::Reasoning, "candidate intersection empty; reset to latest results");
            }
            seen.extend(outcome.hits.iter().map(|h| h.model_id.clone()));
            self.window.set_visible(update.candidates.ids());
            *candidates = Some(update.candidates);
        }
        Ok(outcome.result_block)
    }

    /// Checks a descriptions request: 1..=N distinct ids, each returned by a
    /// trusted retrieval this round.
    fn validate_pool(&self, action: &ToolAction, seen: &IndexSet<String>) -> Result<Vec<String>, String> {
        let mut ids: Vec<String> = Vec::new();
        for id in action.ids() {
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        let n = self.ctx.config.pool_size;
        if ids.is_empty() {
            return Err("no model ids given".into());
        }
        if ids.len() > n {
            return Err(format!("at most {n} models may be requested, got {}", ids.len()));
        }
        // Unknown ids are counted, not echoed: they may be frozen.
        let unknown = ids.iter().filter(|id| !seen.contains(*id)).count();
        if unknown > 0 {
            return Err(format!("{unknown} of the requested models did not appear in this round's search results"));
        }
        Ok(ids)
    }

    /// Sends the full cards of `pool` and asks for one model. A missing or
    /// out-of-pool answer is retried once.
    fn refine(&mut self, mut message: String, pool: &[String]) -> Step<Refined> {
        let cards: Vec<String> = pool
            .iter()
            .filter_map(|id| self.ctx.corpus.get(id))
            .map(|c| serde_json::to_string(c).expect("cards serialize"))
            .collect();
        message.push_str("\n\n");
        message.push_str(&crate::tool_protocol::render_result_block(ToolTag::Descriptions, &cards));
        message.push_str("\n\n");
        message.push_str(&prompts::refinement_instruction());
        self.push_turn(Stage::Refinement, ChatTurn::user(message.trim_start().to_string()));

        let mut problem = String::new();
        for attempt in 0..2 {
            let reply = self.call(Stage::Refinement, Temperature::ZERO)?;
            match parse_boxed(&reply.text) {
                Boxed::Model(id) if pool.contains(&id) => {
                    self.history.push(ChatTurn::assistant(reply.text));
                    return Ok(Refined::Chosen(id));
                }
                Boxed::Uncertain => {
                    self.history.push(ChatTurn::assistant(reply.text));
                    self.event(Stage::Refinement, "refinement returned UNCERTAIN");
                    return Ok(Refined::Uncertain);
                }
                Boxed::Model(id) => problem = format!("NotInPool: {id} is not one of [{}]", pool.join(", ")),
                Boxed::None => problem = "no boxed answer".into(),
            }
            let retry = if attempt == 0 { "; retrying" } else { "" };
            self.event(Stage::Refinement, format!("{problem}{retry}"));
        }
        Err(PipelineErrorKind::Protocol { stage: Stage::Refinement, message: problem })
    }

    /// True when the model confirms `selected`.
    fn reflect(&mut self, selected: &str) -> Step<bool> {
        self.push_turn(Stage::Reflection, ChatTurn::user(prompts::reflection_instruction(selected)));
        for attempt in 0..2 {
            let reply = self.call(Stage::Reflection, Temperature::ZERO)?;
            let verdict = match parse_boxed(&reply.text) {
                Boxed::Model(id) => Some(id == selected),
                Boxed::Uncertain => Some(false),
                Boxed::None => None,
            };
            if let Some(accepted) = verdict {
                self.history.push(ChatTurn::assistant(reply.text));
                let word = if accepted { "accepted" } else { "rejected" };
                self.event(Stage::Reflection, format!("{selected} {word}"));
                return Ok(accepted);
            }
            let retry = if attempt == 0 { "; retrying" } else { "" };
            self.event(Stage::Reflection, format!("no boxed answer{retry}"));
        }
        Err(PipelineErrorKind::Protocol { stage: Stage::Reflection, message: "no boxed answer".into() })
    }
}

fn descriptions_refusal(message: &str) -> String {
    let tag = ToolTag::Descriptions.name();
    format!("<|begin_{tag}_result|>\nRequest refused: {message}.\n<|end_{tag}_result|>")
}

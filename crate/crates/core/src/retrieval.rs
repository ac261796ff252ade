//! Retrieval actions: multi-query expansion, direct and metadata top-k,
//! failure tracing, and candidate narrowing.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::card_store::{CardCorpus, CardView};
use crate::config::PipelineConfig;
use crate::index::{DualIndex, IndexError, RankedHit};
use crate::prompts;
use crate::providers::{
    complete_and_record, ChatProvider, ChatRequest, ChatTurn, Embedder, ProviderError, Stage, Temperature, TokenLedger,
};
use crate::tool_protocol::{render_invalid_result, render_result_block, ActionKind, ToolAction};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("{0:?} is not a retrieval action")]
    NotRetrieval(ActionKind),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiQueryBundle {
    pub original: String,
    pub variants: Vec<String>,
    pub concatenated: String,
}

impl MultiQueryBundle {
    /// Builds the bundle, padding `variants` with the original up to `n`.
    pub fn new(original: &str, mut variants: Vec<String>, n: usize) -> Self {
        variants.truncate(n);
        while variants.len() < n {
            variants.push(original.to_string());
        }
        let mut concatenated = original.to_string();
        for v in &variants {
            concatenated.push(' ');
            concatenated.push_str(v);
        }
        Self { original: original.to_string(), variants, concatenated }
    }
}

/// Strips a leading list marker such as `1.`, `2)`, `-` or `*`.
fn strip_list_marker(line: &str) -> &str {
    let t = line.trim();
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim();
        }
    }
    t.strip_prefix("- ").or_else(|| t.strip_prefix("* ")).unwrap_or(t).trim()
}

pub fn generate_multi_queries(
    question: &str,
    n: usize,
    chat: &dyn ChatProvider,
    ledger: &mut TokenLedger,
) -> Result<MultiQueryBundle, ProviderError> {
    let request = ChatRequest::new(
        vec![ChatTurn::system(prompts::multi_query_system(n)), ChatTurn::user(prompts::multi_query_user(question))],
        Temperature::ZERO,
    );
    let reply = complete_and_record(chat, &request, Stage::MultiQuery, ledger)?;
    let variants: Vec<String> =
        reply.text.lines().map(strip_list_marker).filter(|l| !l.is_empty()).map(str::to_string).collect();
    Ok(MultiQueryBundle::new(question, variants, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Trusted,
    Untrusted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceCheckOutcome {
    pub overlap: f64,
    pub verdict: Verdict,
}

/// How similar a metadata result list is to its paired direct result list.
pub trait ResultSetSimilarity {
    fn similarity(&self, meta: &[RankedHit], direct: &[RankedHit], k: usize) -> f64;
}

/// |ids(meta) ∩ ids(direct)| / k.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdOverlap;

impl ResultSetSimilarity for IdOverlap {
    fn similarity(&self, meta: &[RankedHit], direct: &[RankedHit], k: usize) -> f64 {
        if k == 0 {
            return 0.0;
        }
        let direct_ids: HashSet<&str> = direct.iter().map(|h| h.model_id.as_str()).collect();
        let shared = meta.iter().map(|h| h.model_id.as_str()).collect::<HashSet<_>>().intersection(&direct_ids).count();
        shared as f64 / k as f64
    }
}

pub fn failure_trace_check(meta: &[RankedHit], direct: &[RankedHit], theta: f64, k: usize) -> TraceCheckOutcome {
    failure_trace_check_with(&IdOverlap, meta, direct, theta, k)
}

pub fn failure_trace_check_with(
    metric: &dyn ResultSetSimilarity,
    meta: &[RankedHit],
    direct: &[RankedHit],
    theta: f64,
    k: usize,
) -> TraceCheckOutcome {
    let overlap = metric.similarity(meta, direct, k);
    let verdict = if meta.is_empty() || overlap < theta { Verdict::Untrusted } else { Verdict::Trusted };
    TraceCheckOutcome { overlap, verdict }
}

/// Ranked candidates carried between turns of one sliding-window round.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateSet {
    pub hits: Vec<RankedHit>,
    pub source_round: u32,
}

impl CandidateSet {
    pub fn ids(&self) -> Vec<String> {
        self.hits.iter().map(|h| h.model_id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.hits.iter().any(|h| h.model_id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateUpdate {
    pub candidates: CandidateSet,
    /// The intersection was empty and the set restarted from the new hits.
    pub reset: bool,
}

impl CandidateUpdate {
    /// Small enough to hand to refinement.
    pub fn ready_for_refinement(&self, pool_size: usize) -> bool {
        !self.candidates.is_empty() && self.candidates.len() <= pool_size
    }
}

/// Intersects the prior candidates with `new_hits` (keeping prior order),
/// starting over from `new_hits` when there is no prior set or the
/// intersection is empty.
pub fn update_candidates(prior: Option<&CandidateSet>, new_hits: &[RankedHit], round: u32) -> CandidateUpdate {
    let fresh = || CandidateSet { hits: dedup(new_hits), source_round: round };
    match prior {
        None => CandidateUpdate { candidates: fresh(), reset: false },
        Some(prior) if prior.is_empty() => CandidateUpdate { candidates: fresh(), reset: false },
        Some(prior) => {
            let incoming: HashSet<&str> = new_hits.iter().map(|h| h.model_id.as_str()).collect();
            let kept: Vec<RankedHit> =
                prior.hits.iter().filter(|h| incoming.contains(h.model_id.as_str())).cloned().collect();
            if kept.is_empty() {
                CandidateUpdate { candidates: fresh(), reset: !new_hits.is_empty() }
            } else {
                CandidateUpdate { candidates: CandidateSet { hits: kept, source_round: round }, reset: false }
            }
        }
    }
}

fn dedup(hits: &[RankedHit]) -> Vec<RankedHit> {
    let mut seen = HashSet::new();
    hits.iter().filter(|h| seen.insert(h.model_id.clone())).cloned().collect()
}

/// Shared, read-only state a retrieval runs against.
pub struct RetrievalContext<'a> {
    pub corpus: &'a CardCorpus,
    pub index: &'a DualIndex,
    pub embedder: &'a dyn Embedder,
    pub chat: &'a dyn ChatProvider,
    pub config: &'a PipelineConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalOutcome {
    pub kind: ActionKind,
    /// Hits the candidate set may use; empty when the trace check failed.
    pub hits: Vec<RankedHit>,
    pub raw_hits: Vec<RankedHit>,
    pub paired_direct: Option<Vec<RankedHit>>,
    pub trace: Option<TraceCheckOutcome>,
    pub bundle: Option<MultiQueryBundle>,
    pub result_block: String,
}

impl RetrievalOutcome {
    pub fn trusted(&self) -> bool {
        self.trace.is_none_or(|t| t.verdict == Verdict::Trusted)
    }
}

/// Runs one retrieval action, excluding `frozen` ids.
///
/// Direct retrieval embeds the multi-query concatenation and ranks against
/// the full view. Language and dataset retrieval embed the payload and rank
/// against the metadata view, restricted to cards that actually carry the
/// corresponding field; the same payload is then run as a direct retrieval
/// and the two lists go through the failure-trace check.
pub fn execute_retrieval(
    action: &ToolAction,
    ctx: &RetrievalContext<'_>,
    frozen: &HashSet<String>,
    ledger: &mut TokenLedger,
) -> Result<RetrievalOutcome, RetrievalError> {
    let k = ctx.config.top_k;
    let tag =
        action.kind.tag().filter(|_| action.kind.is_retrieval()).ok_or(RetrievalError::NotRetrieval(action.kind))?;
    let not_frozen = |id: &str| !frozen.contains(id);

    if action.kind == ActionKind::DirectRetrieval {
        let bundle = generate_multi_queries(&action.payload, ctx.config.multi_query_n, ctx.chat, ledger)?;
        let query = ctx.embedder.embed_one(&bundle.concatenated)?;
        let hits = ctx.index.top_k_where(&query, CardView::Full, k, |r| not_frozen(&r.model_id))?;
        let ids: Vec<&str> = hits.iter().map(|h| h.model_id.as_str()).collect();
        return Ok(RetrievalOutcome {
            kind: action.kind,
            raw_hits: hits.clone(),
            result_block: render_result_block(tag, &ids),
            hits,
            paired_direct: None,
            trace: None,
            bundle: Some(bundle),
        });
    }

    let has_field = |id: &str| {
        ctx.corpus.get(id).is_some_and(|c| match action.kind {
            ActionKind::LanguageRetrieval => !c.languages.is_empty(),
            _ => !c.datasets.is_empty(),
        })
    };
    let query = ctx.embedder.embed_one(&action.payload)?;
    let meta_hits =
        ctx.index.top_k_where(&query, CardView::Metadata, k, |r| not_frozen(&r.model_id) && has_field(&r.model_id))?;
    let direct_hits = ctx.index.top_k_where(&query, CardView::Full, k, |r| not_frozen(&r.model_id))?;
    let trace = failure_trace_check(&meta_hits, &direct_hits, ctx.config.theta, k);
    let (hits, result_block) = match trace.verdict {
        Verdict::Trusted => {
            let ids: Vec<&str> = meta_hits.iter().map(|h| h.model_id.as_str()).collect();
            (meta_hits.clone(), render_result_block(tag, &ids))
        }
        Verdict::Untrusted => (Vec::new(), render_invalid_result(tag)),
    };
    Ok(RetrievalOutcome {
        kind: action.kind,
        hits,
        raw_hits: meta_hits,
        paired_direct: Some(direct_hits),
        trace: Some(trace),
        bundle: None,
        result_block,
    })
}

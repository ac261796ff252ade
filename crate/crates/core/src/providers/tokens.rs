//! Per-stage token accounting.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Pipeline stage a chat call is billed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Preprocess,
    MultiQuery,
    Reasoning,
    Refinement,
    Reflection,
    Baseline,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Preprocess => "preprocess",
            Stage::MultiQuery => "multi_query",
            Stage::Reasoning => "reasoning",
            Stage::Refinement => "refinement",
            Stage::Reflection => "reflection",
            Stage::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub calls: u64,
    /// At least one count in this stage came from the word-count proxy.
    pub proxy: bool,
}

impl StageUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// Token usage keyed by stage. Totals are always derived from the stage
/// entries, never stored separately.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLedger {
    stages: BTreeMap<Stage, StageUsage>,
}

impl TokenLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, stage: Stage, prompt_tokens: u64, completion_tokens: u64, proxy: bool) {
        let entry = self.stages.entry(stage).or_default();
        entry.prompt_tokens += prompt_tokens;
        entry.completion_tokens += completion_tokens;
        entry.calls += 1;
        entry.proxy |= proxy;
    }

    pub fn stage(&self, stage: Stage) -> StageUsage {
        self.stages.get(&stage).copied().unwrap_or_default()
    }

    pub fn stages(&self) -> impl Iterator<Item = (Stage, &StageUsage)> {
        self.stages.iter().map(|(s, u)| (*s, u))
    }

    pub fn prompt_tokens(&self) -> u64 {
        self.stages.values().map(|u| u.prompt_tokens).sum()
    }

    pub fn completion_tokens(&self) -> u64 {
        self.stages.values().map(|u| u.completion_tokens).sum()
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens() + self.completion_tokens()
    }

    pub fn merge(&mut self, other: &TokenLedger) {
        for (stage, usage) in &other.stages {
            let entry = self.stages.entry(*stage).or_default();
            entry.prompt_tokens += usage.prompt_tokens;
            entry.completion_tokens += usage.completion_tokens;
            entry.calls += usage.calls;
            entry.proxy |= usage.proxy;
        }
    }
}

/// Word-count token proxy: whitespace tokens × 4/3, rounded up.
pub fn count_tokens(text: &str) -> u64 {
    let words = text.split_whitespace().count() as u64;
    (words * 4).div_ceil(3)
}

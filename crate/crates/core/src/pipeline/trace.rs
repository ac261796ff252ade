//! Session trace: one JSON record per line, in the order things happened.
//!
//! Record fields: `seq`, `round`, `stage`, `role` (`system`, `user`,
//! `assistant` or `event`), `text`, `prompt_tokens`, `completion_tokens`.
//! Token counts are non-zero only on assistant records. The encoding holds no
//! floats or hash-ordered collections, so identical sessions produce
//! byte-identical files.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::providers::{ChatResponse, Role, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceRole {
    System,
    User,
    Assistant,
    Event,
}

impl From<Role> for TraceRole {
    fn from(role: Role) -> Self {
        match role {
            Role::System => TraceRole::System,
            Role::User => TraceRole::User,
            Role::Assistant => TraceRole::Assistant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub round: u32,
    pub stage: Stage,
    pub role: TraceRole,
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, round: u32, stage: Stage, role: TraceRole, text: impl Into<String>) {
        self.push_with_tokens(round, stage, role, text, 0, 0);
    }

    pub fn push_reply(&mut self, round: u32, stage: Stage, reply: &ChatResponse) {
        self.push_with_tokens(
            round,
            stage,
            TraceRole::Assistant,
            reply.text.clone(),
            reply.prompt_tokens,
            reply.completion_tokens,
        );
    }

    pub fn push_with_tokens(
        &mut self,
        round: u32,
        stage: Stage,
        role: TraceRole,
        text: impl Into<String>,
        prompt_tokens: u64,
        completion_tokens: u64,
    ) {
        let seq = self.records.len() as u64;
        self.records.push(TraceRecord { seq, round, stage, role, text: text.into(), prompt_tokens, completion_tokens });
    }

    pub fn events(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| r.role == TraceRole::Event)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_jsonl())
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records =
            text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { records })
    }
}

use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{count_tokens, ChatProvider, ChatRequest, ChatResponse, ProviderError};

/// One scripted reply. When `match` is set, the newest turn of the incoming
/// request must contain it or the call fails.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match", default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<String>,
    pub reply: String,
}

impl ScriptEntry {
    pub fn new(reply: impl Into<String>) -> Self {
        Self { guard: None, reply: reply.into() }
    }

    pub fn guarded(guard: impl Into<String>, reply: impl Into<String>) -> Self {
        Self { guard: Some(guard.into()), reply: reply.into() }
    }
}

/// Replays a fixed list of replies in order. Token counts use the
/// word-count proxy over the whole request and the reply.
pub struct ScriptedChat {
    entries: Vec<ScriptEntry>,
    cursor: Mutex<usize>,
}

impl ScriptedChat {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self { entries, cursor: Mutex::new(0) }
    }

    /// Parses a script file: one JSON object per line, `{"match": ..., "reply": ...}`.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, ProviderError> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(line)
                .map_err(|e| ProviderError::malformed(format!("script line {}: {e}", lineno + 1)))?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ProviderError::malformed(format!("cannot read script {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_jsonl(entries: &[ScriptEntry]) -> String {
        entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("script entry serializes"))
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    }

    pub fn consumed(&self) -> usize {
        *self.cursor.lock().expect("script cursor poisoned")
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - self.consumed()
    }

    /// Rewinds to the first entry.
    pub fn reset(&self) {
        *self.cursor.lock().expect("script cursor poisoned") = 0;
    }
}

impl ChatProvider for ScriptedChat {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        if request.turns.is_empty() {
            return Err(ProviderError::malformed("empty chat request"));
        }
        let mut cursor = self.cursor.lock().expect("script cursor poisoned");
        let entry = self
            .entries
            .get(*cursor)
            .ok_or_else(|| ProviderError::malformed(format!("script exhausted after {} entries", *cursor)))?;
        if let Some(guard) = &entry.guard {
            if !request.last_content().contains(guard.as_str()) {
                return Err(ProviderError::malformed(format!(
                    "script entry {} expected prompt containing {guard:?}",
                    *cursor + 1
                )));
            }
        }
        *cursor += 1;
        Ok(ChatResponse {
            text: entry.reply.clone(),
            prompt_tokens: count_tokens(&request.prompt_text()),
            completion_tokens: count_tokens(&entry.reply),
            proxy_counts: true,
        })
    }
}

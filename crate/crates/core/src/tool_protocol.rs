//! Tag-delimited tool protocol exchanged with the reasoning model.
//!
//! Queries look like `<|begin_similarity_query|> ... <|end_similarity_query|>`
//! (likewise `language`, `dataset`, `descriptions`), results use the
//! matching `_result` tags, and final answers are `\boxed{...}`. Tag names
//! written with escaped underscores (`begin\_similarity\_query`) are
//! accepted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const INVALID_RETRIEVAL: &str = "This retrieval is invalid. Please refer to other search results.";
pub const UNCERTAIN: &str = "UNCERTAIN";
const BOXED_OPEN: &str = "\\boxed{";
/// Longest tag name we bother scanning for.
const MAX_TAG_LEN: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolTag {
    Similarity,
    Language,
    Dataset,
    Descriptions,
}

impl ToolTag {
    pub const ALL: [ToolTag; 4] = [ToolTag::Similarity, ToolTag::Language, ToolTag::Dataset, ToolTag::Descriptions];

    pub fn name(&self) -> &'static str {
        match self {
            ToolTag::Similarity => "similarity",
            ToolTag::Language => "language",
            ToolTag::Dataset => "dataset",
            ToolTag::Descriptions => "descriptions",
        }
    }

    pub fn action_kind(&self) -> ActionKind {
        match self {
            ToolTag::Similarity => ActionKind::DirectRetrieval,
            ToolTag::Language => ActionKind::LanguageRetrieval,
            ToolTag::Dataset => ActionKind::DatasetRetrieval,
            ToolTag::Descriptions => ActionKind::FetchDescriptions,
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    DirectRetrieval,
    LanguageRetrieval,
    DatasetRetrieval,
    FetchDescriptions,
    FinalAnswer,
    Uncertain,
}

impl ActionKind {
    pub fn tag(&self) -> Option<ToolTag> {
        match self {
            ActionKind::DirectRetrieval => Some(ToolTag::Similarity),
            ActionKind::LanguageRetrieval => Some(ToolTag::Language),
            ActionKind::DatasetRetrieval => Some(ToolTag::Dataset),
            ActionKind::FetchDescriptions => Some(ToolTag::Descriptions),
            ActionKind::FinalAnswer | ActionKind::Uncertain => None,
        }
    }

    pub fn is_retrieval(&self) -> bool {
        matches!(self, ActionKind::DirectRetrieval | ActionKind::LanguageRetrieval | ActionKind::DatasetRetrieval)
    }

    pub fn is_metadata_retrieval(&self) -> bool {
        matches!(self, ActionKind::LanguageRetrieval | ActionKind::DatasetRetrieval)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolAction {
    pub kind: ActionKind,
    pub payload: String,
    /// Byte offsets of the whole construct in the source text.
    pub raw_span: (usize, usize),
}

impl ToolAction {
    /// Model ids carried by a descriptions query.
    pub fn ids(&self) -> Vec<String> {
        parse_id_list(&self.payload)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedTurn {
    pub actions: Vec<ToolAction>,
    /// Text outside query tags and boxed answers.
    pub narration: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("tag <|{tag}|> at byte {offset} has no closing tag")]
    UnterminatedTag { tag: String, offset: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Boxed {
    Model(String),
    Uncertain,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolResultBlock {
    pub tag: ToolTag,
    pub body: String,
}

impl ToolResultBlock {
    pub fn is_invalid(&self) -> bool {
        self.body.trim() == INVALID_RETRIEVAL
    }

    /// Comma-separated ids of a retrieval result.
    pub fn ids(&self) -> Vec<String> {
        if self.is_invalid() {
            return Vec::new();
        }
        parse_id_list(&self.body)
    }

    /// Individual card bodies of a descriptions result.
    pub fn card_bodies(&self) -> Vec<String> {
        match serde_json::from_str::<Vec<serde_json::Value>>(self.body.trim()) {
            Ok(items) => items.iter().map(|v| v.to_string()).collect(),
            Err(_) => Vec::new(),
        }
    }
}

/// A `<|...|>` tag found in text: normalized name plus byte span.
struct Tag {
    name: String,
    start: usize,
    end: usize,
}

fn next_tag(text: &str, from: usize) -> Option<Tag> {
    let mut pos = from;
    while let Some(rel) = text[pos..].find("<|") {
        let start = pos + rel;
        let inner_start = start + 2;
        let window_end = (inner_start + MAX_TAG_LEN * 2).min(text.len());
        let window = safe_slice(text, inner_start, window_end);
        if let Some(close) = window.find("|>") {
            let raw = &window[..close];
            if !raw.is_empty() && raw.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '\\') {
                return Some(Tag { name: raw.replace("\\_", "_"), start, end: inner_start + close + 2 });
            }
        }
        pos = start + 2;
    }
    None
}

/// Slice clipped back to a char boundary.
fn safe_slice(text: &str, start: usize, mut end: usize) -> &str {
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    &text[start..end]
}

fn find_tag_named(text: &str, from: usize, name: &str) -> Option<Tag> {
    let mut pos = from;
    while let Some(tag) = next_tag(text, pos) {
        if tag.name == name {
            return Some(tag);
        }
        pos = tag.end;
    }
    None
}

/// Position of the brace closing a `\boxed{` whose content starts at `from`.
fn closing_brace(text: &str, from: usize) -> Option<usize> {
    let mut depth = 1usize;
    for (i, c) in text[from..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(from + i);
                }
            }
            _ => {}
        }
    }
    None
}

enum Construct {
    Tag(Tag),
    Boxed(usize),
}

fn next_construct(text: &str, from: usize) -> Option<Construct> {
    let tag = next_tag(text, from);
    let boxed = text[from..].find(BOXED_OPEN).map(|i| from + i);
    match (tag, boxed) {
        (Some(t), Some(b)) if b < t.start => Some(Construct::Boxed(b)),
        (Some(t), _) => Some(Construct::Tag(t)),
        (None, Some(b)) => Some(Construct::Boxed(b)),
        (None, None) => None,
    }
}

/// Extracts tool calls and boxed answers in document order.
pub fn parse_actions(text: &str) -> Result<ParsedTurn, ProtocolError> {
    let mut turn = ParsedTurn::default();
    let mut narration = String::new();
    let mut pos = 0;
    while let Some(construct) = next_construct(text, pos) {
        match construct {
            Construct::Boxed(start) => {
                let content_start = start + BOXED_OPEN.len();
                let Some(close) = closing_brace(text, content_start) else {
                    narration.push_str(&text[pos..content_start]);
                    pos = content_start;
                    continue;
                };
                narration.push_str(&text[pos..start]);
                let payload = text[content_start..close].trim();
                let span = (start, close + 1);
                if payload == UNCERTAIN {
                    turn.actions.push(ToolAction {
                        kind: ActionKind::Uncertain,
                        payload: String::new(),
                        raw_span: span,
                    });
                } else if !payload.is_empty() {
                    turn.actions.push(ToolAction {
                        kind: ActionKind::FinalAnswer,
                        payload: payload.to_string(),
                        raw_span: span,
                    });
                }
                pos = close + 1;
            }
            Construct::Tag(tag) => {
                let query =
                    tag.name.strip_prefix("begin_").and_then(|n| n.strip_suffix("_query")).and_then(ToolTag::from_name);
                let result = tag
                    .name
                    .strip_prefix("begin_")
                    .and_then(|n| n.strip_suffix("_result"))
                    .and_then(ToolTag::from_name);
                if let Some(kind) = query {
                    let end_name = format!("end_{}_query", kind.name());
                    let end = find_tag_named(text, tag.end, &end_name)
                        .ok_or_else(|| ProtocolError::UnterminatedTag { tag: tag.name.clone(), offset: tag.start })?;
                    narration.push_str(&text[pos..tag.start]);
                    let payload = text[tag.end..end.start].trim();
                    if !payload.is_empty() {
                        turn.actions.push(ToolAction {
                            kind: kind.action_kind(),
                            payload: payload.to_string(),
                            raw_span: (tag.start, end.end),
                        });
                    }
                    pos = end.end;
                } else if let Some(kind) = result {
                    // Result blocks written by the model itself are kept as
                    // narration and never executed.
                    let end_name = format!("end_{}_result", kind.name());
                    let stop = find_tag_named(text, tag.end, &end_name).map_or(tag.end, |e| e.end);
                    narration.push_str(&text[pos..stop]);
                    pos = stop;
                } else {
                    narration.push_str(&text[pos..tag.end]);
                    pos = tag.end;
                }
            }
        }
    }
    narration.push_str(&text[pos..]);
    turn.narration = narration.trim().to_string();
    Ok(turn)
}

/// Payload of the last `\boxed{...}` in `text`.
pub fn parse_boxed(text: &str) -> Boxed {
    let mut last = Boxed::None;
    let mut pos = 0;
    while let Some(rel) = text[pos..].find(BOXED_OPEN) {
        let content_start = pos + rel + BOXED_OPEN.len();
        match closing_brace(text, content_start) {
            Some(close) => {
                let payload = text[content_start..close].trim();
                if payload == UNCERTAIN {
                    last = Boxed::Uncertain;
                } else if !payload.is_empty() {
                    last = Boxed::Model(payload.to_string());
                }
                pos = close + 1;
            }
            None => pos = content_start,
        }
    }
    last
}

/// Splits `[a, b, c]` or `a, b, c` into trimmed ids, dropping stray quotes
/// and backticks.
pub fn parse_id_list(payload: &str) -> Vec<String> {
    let inner = payload.trim();
    let inner = inner.strip_prefix('[').unwrap_or(inner);
    let inner = inner.strip_suffix(']').unwrap_or(inner);
    inner
        .split([',', '\n'])
        .map(|s| s.trim().trim_matches(|c: char| c == '`' || c == '"' || c == '\'' || c.is_whitespace()))
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn render_query(tag: ToolTag, payload: &str) -> String {
    format!("<|begin_{0}_query|>\n{payload}\n<|end_{0}_query|>", tag.name())
}

pub fn render_boxed(payload: &str) -> String {
    format!("\\boxed{{{payload}}}")
}

/// Renders an action back into wire form.
pub fn render_action(action: &ToolAction) -> String {
    match action.kind {
        ActionKind::FinalAnswer => render_boxed(&action.payload),
        ActionKind::Uncertain => render_boxed(UNCERTAIN),
        kind => render_query(kind.tag().expect("query kinds have tags"), &action.payload),
    }
}

/// `<|begin_X_result|>\n[item1, item2]\n<|end_X_result|>`.
pub fn render_result_block<S: AsRef<str>>(tag: ToolTag, items: &[S]) -> String {
    let joined = items.iter().map(|s| s.as_ref()).collect::<Vec<_>>().join(", ");
    format!("<|begin_{0}_result|>\n[{joined}]\n<|end_{0}_result|>", tag.name())
}

/// Result block for a retrieval that failed the trust check.
pub fn render_invalid_result(tag: ToolTag) -> String {
    format!("<|begin_{0}_result|>\n{INVALID_RETRIEVAL}\n<|end_{0}_result|>", tag.name())
}

/// Every result block in `text`, in order. Unterminated blocks are skipped.
pub fn parse_result_blocks(text: &str) -> Vec<ToolResultBlock> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(tag) = next_tag(text, pos) {
        pos = tag.end;
        let Some(kind) =
            tag.name.strip_prefix("begin_").and_then(|n| n.strip_suffix("_result")).and_then(ToolTag::from_name)
        else {
            continue;
        };
        if let Some(end) = find_tag_named(text, tag.end, &format!("end_{}_result", kind.name())) {
            out.push(ToolResultBlock { tag: kind, body: text[tag.end..end.start].trim().to_string() });
            pos = end.end;
        }
    }
    out
}

//! Model card ingestion: raw hub cards in, simplified cards out, plus the
//! canonical text views the embedding index is built from.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::providers::{
    complete_and_record, ChatProvider, ChatRequest, ChatTurn, ProviderError, Stage, Temperature, TokenLedger,
};

/// Default character budget for fallback-simplified descriptions.
pub const DEFAULT_DESCRIPTION_CHARS: usize = 600;

pub const PREPROCESS_PROMPT: &str = "You are a helpful assistant specialized in simplifying HuggingFace model cards. \
Your task is to extract only the fields relevant to model selection: id, downloads, likes, pipeline_tag, task, meta, \
language, datasets, and description. For the description field, simplify the content by keeping only the most \
essential information that helps users understand the model's purpose and use case. Output only a clean, valid JSON \
object with the selected and simplified fields.";

#[derive(Debug, Error)]
pub enum CardError {
    #[error("malformed card: {0}")]
    MalformedCard(String),
    #[error("provider failed while simplifying {id}: {source}")]
    Provider {
        id: String,
        #[source]
        source: ProviderError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawModelCard {
    pub id: String,
    #[serde(default)]
    pub task: String,
    #[serde(default)]
    pub downloads: u64,
    #[serde(default)]
    pub likes: u64,
    #[serde(default)]
    pub meta: Map<String, Value>,
    #[serde(default)]
    pub description: String,
}

impl RawModelCard {
    pub fn languages(&self) -> Vec<String> {
        normalize_list(self.meta.get("language"))
    }

    pub fn datasets(&self) -> Vec<String> {
        normalize_list(self.meta.get("datasets"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    LlmSimplified,
    FallbackSimplified,
    Passthrough,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessedModelCard {
    pub id: String,
    pub task: String,
    pub downloads: u64,
    pub likes: u64,
    pub languages: Vec<String>,
    pub datasets: Vec<String>,
    pub simplified_description: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CardView {
    Full,
    Metadata,
}

/// Parses one serialized raw card. Missing numeric fields default to zero;
/// `pipeline_tag` stands in for `task` only when `task` is absent; top-level
/// `language`/`datasets` keys are folded into `meta` when `meta` lacks them.
pub fn parse_raw_card(text: &str) -> Result<RawModelCard, CardError> {
    let value: Value = serde_json::from_str(text).map_err(|e| CardError::MalformedCard(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(CardError::MalformedCard("card is not a JSON object".into()));
    };
    let id = obj
        .get("id")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| CardError::MalformedCard("missing \"id\"".into()))?
        .to_string();
    let task = obj
        .get("task")
        .and_then(Value::as_str)
        .or_else(|| obj.get("pipeline_tag").and_then(Value::as_str))
        .unwrap_or("")
        .trim()
        .to_string();
    let mut meta = match obj.get("meta") {
        Some(Value::Object(m)) => m.clone(),
        _ => Map::new(),
    };
    for key in ["language", "datasets"] {
        if let Some(v) = obj.get(key) {
            meta.entry(key).or_insert_with(|| v.clone());
        }
    }
    Ok(RawModelCard {
        id,
        task,
        downloads: count_field(obj.get("downloads")),
        likes: count_field(obj.get("likes")),
        meta,
        description: obj.get("description").and_then(Value::as_str).unwrap_or("").to_string(),
    })
}

fn count_field(v: Option<&Value>) -> u64 {
    match v {
        Some(Value::Number(n)) => {
            n.as_u64().or_else(|| n.as_f64().filter(|f| *f >= 0.0).map(|f| f as u64)).unwrap_or(0)
        }
        Some(Value::String(s)) => s.trim().replace(',', "").parse().unwrap_or(0),
        _ => 0,
    }
}

/// Lowercased, trimmed, deduplicated entries of a string-or-list field.
fn normalize_list(v: Option<&Value>) -> Vec<String> {
    let raw: Vec<&str> = match v {
        Some(Value::String(s)) => vec![s.as_str()],
        Some(Value::Array(items)) => items.iter().filter_map(Value::as_str).collect(),
        _ => Vec::new(),
    };
    let mut out: Vec<String> = Vec::new();
    for item in raw {
        let norm = item.trim().to_lowercase();
        if !norm.is_empty() && !out.contains(&norm) {
            out.push(norm);
        }
    }
    out
}

static MD_IMAGE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"!\[[^\]]*\]\([^)]*\)").unwrap());
static MD_LINK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[([^\]]*)\]\([^)]*\)").unwrap());

fn is_url_token(token: &str) -> bool {
    let lower = token.to_ascii_lowercase();
    lower.contains("http://")
        || lower.contains("https://")
        || lower.trim_start_matches(['(', '<', '[']).starts_with("www.")
}

/// Drops markdown images, unwraps markdown links to their text, removes URL
/// tokens and collapses whitespace.
pub fn strip_links(text: &str) -> String {
    // Nested constructs like `[[x](y)](z)` need more than one pass.
    let mut current = text.to_string();
    loop {
        let no_images = MD_IMAGE.replace_all(&current, "");
        let next = MD_LINK.replace_all(&no_images, "$1").into_owned();
        if next == current {
            break;
        }
        current = next;
    }
    current.split_whitespace().filter(|t| !is_url_token(t)).collect::<Vec<_>>().join(" ")
}

/// [`strip_links`] followed by truncation to `max_chars` characters.
pub fn clean_description(text: &str, max_chars: usize) -> String {
    let stripped = strip_links(text);
    if stripped.chars().count() <= max_chars {
        return stripped;
    }
    let cut: String = stripped.chars().take(max_chars).collect();
    cut.trim_end().to_string()
}

/// Deterministic offline simplification.
pub fn simplify_card_fallback(card: &RawModelCard, max_chars: usize) -> ProcessedModelCard {
    ProcessedModelCard {
        id: card.id.clone(),
        task: card.task.clone(),
        downloads: card.downloads,
        likes: card.likes,
        languages: card.languages(),
        datasets: card.datasets(),
        simplified_description: clean_description(&card.description, max_chars),
        provenance: Provenance::FallbackSimplified,
    }
}

/// Simplifies a card through the chat provider. Unparseable replies fall
/// back to [`simplify_card_fallback`]; transport failures propagate.
pub fn simplify_card_llm(
    card: &RawModelCard,
    chat: &dyn ChatProvider,
    max_chars: usize,
    ledger: &mut TokenLedger,
) -> Result<ProcessedModelCard, CardError> {
    let raw_json = serde_json::to_string(card).expect("raw card serializes");
    let request =
        ChatRequest::new(vec![ChatTurn::system(PREPROCESS_PROMPT), ChatTurn::user(raw_json)], Temperature::ZERO);
    let response = complete_and_record(chat, &request, Stage::Preprocess, ledger)
        .map_err(|source| CardError::Provider { id: card.id.clone(), source })?;
    match parse_llm_card(&response.text, card) {
        Some(processed) => Ok(processed),
        None => {
            log::warn!("{}: unparseable simplification reply, using fallback", card.id);
            Ok(simplify_card_fallback(card, max_chars))
        }
    }
}

fn parse_llm_card(reply: &str, source: &RawModelCard) -> Option<ProcessedModelCard> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    if end < start {
        return None;
    }
    let Value::Object(obj) = serde_json::from_str::<Value>(&reply[start..=end]).ok()? else {
        return None;
    };
    let description = obj.get("description").and_then(Value::as_str)?;
    let meta = obj.get("meta").and_then(Value::as_object);
    let field = |key: &str| -> Option<Vec<String>> {
        let v = obj.get(key).or_else(|| meta.and_then(|m| m.get(key)))?;
        Some(normalize_list(Some(v)))
    };
    let task = obj
        .get("task")
        .and_then(Value::as_str)
        .or_else(|| obj.get("pipeline_tag").and_then(Value::as_str))
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| source.task.clone());
    Some(ProcessedModelCard {
        id: source.id.clone(),
        task,
        downloads: source.downloads,
        likes: source.likes,
        languages: field("language").unwrap_or_else(|| source.languages()),
        datasets: field("datasets").unwrap_or_else(|| source.datasets()),
        simplified_description: strip_links(description),
        provenance: Provenance::LlmSimplified,
    })
}

/// Canonical embedding input for a card view.
pub fn render_card_text(card: &ProcessedModelCard, view: CardView) -> String {
    let languages = card.languages.join(" ");
    let datasets = card.datasets.join(" ");
    match view {
        CardView::Full => {
            [card.id.as_str(), card.task.as_str(), &languages, &datasets, card.simplified_description.as_str()]
                .join(" | ")
        }
        CardView::Metadata => [card.task.as_str(), &languages, &datasets].join(" | "),
    }
}

/// Ordered, id-addressable set of processed cards. Immutable once built.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CardCorpus {
    cards: Vec<ProcessedModelCard>,
    by_id: HashMap<String, usize>,
}

impl CardCorpus {
    /// Builds a corpus. A repeated id replaces the earlier card in place.
    pub fn new(cards: impl IntoIterator<Item = ProcessedModelCard>) -> Self {
        let mut corpus = CardCorpus::default();
        for card in cards {
            match corpus.by_id.get(&card.id) {
                Some(&pos) => {
                    log::warn!("duplicate card id {}; keeping the later occurrence", card.id);
                    corpus.cards[pos] = card;
                }
                None => {
                    corpus.by_id.insert(card.id.clone(), corpus.cards.len());
                    corpus.cards.push(card);
                }
            }
        }
        corpus
    }

    pub fn len(&self) -> usize {
        self.cards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cards.is_empty()
    }

    pub fn cards(&self) -> &[ProcessedModelCard] {
        &self.cards
    }

    pub fn get(&self, id: &str) -> Option<&ProcessedModelCard> {
        self.by_id.get(id).map(|&i| &self.cards[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.cards.iter().map(|c| c.id.as_str())
    }

    /// Loads a processed-corpus cache file.
    pub fn load(path: &Path) -> Result<Self, CardError> {
        let text = read(path)?;
        let mut cards = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let card: ProcessedModelCard = serde_json::from_str(line)
                .map_err(|e| CardError::MalformedCard(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
            cards.push(card);
        }
        Ok(Self::new(cards))
    }

    pub fn write(&self, path: &Path) -> Result<(), CardError> {
        let io = |source| CardError::Io { path: path.display().to_string(), source };
        let mut out = BufWriter::new(fs::File::create(path).map_err(io)?);
        for card in &self.cards {
            let line = serde_json::to_string(card).expect("processed card serializes");
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Result of reading a raw corpus file.
#[derive(Debug, Default)]
pub struct RawCorpus {
    pub cards: Vec<RawModelCard>,
    /// (1-based line number, reason) for every skipped line.
    pub skipped: Vec<(usize, String)>,
}

/// Reads a JSONL raw-card file, skipping (and reporting) malformed lines.
pub fn load_raw_cards(path: &Path) -> Result<RawCorpus, CardError> {
    let text = read(path)?;
    Ok(parse_raw_corpus(&text))
}

pub fn parse_raw_corpus(text: &str) -> RawCorpus {
    let mut corpus = RawCorpus::default();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_raw_card(line) {
            Ok(card) => corpus.cards.push(card),
            Err(e) => {
                log::warn!("line {}: {e}", lineno + 1);
                corpus.skipped.push((lineno + 1, e.to_string()));
            }
        }
    }
    corpus
}

fn read(path: &Path) -> Result<String, CardError> {
    fs::read_to_string(path).map_err(|source| CardError::Io { path: path.display().to_string(), source })
}

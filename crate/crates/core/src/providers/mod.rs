//! Chat and embedding provider contracts, deterministic mocks, and the
//! OpenAI-compatible HTTP clients.

mod hash_embed;
mod heuristic;
mod live;
mod scripted;
mod tokens;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hash_embed::{HashEmbedder, DEFAULT_DIMENSION};
pub use heuristic::LexicalAgent;
pub use live::{LiveChat, LiveEmbedder, RetryPolicy};
pub use scripted::{ScriptEntry, ScriptedChat};
pub use tokens::{count_tokens, Stage, StageUsage, TokenLedger};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
}

impl ChatTurn {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// Sampling temperature for a call. `ProviderDefault` leaves the field
/// unset on the wire.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Temperature {
    ProviderDefault,
    Fixed(f32),
}

impl Temperature {
    pub const ZERO: Temperature = Temperature::Fixed(0.0);
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub turns: Vec<ChatTurn>,
    pub temperature: Temperature,
}

impl ChatRequest {
    pub fn new(turns: Vec<ChatTurn>, temperature: Temperature) -> Self {
        Self { turns, temperature }
    }

    /// All turn contents joined, used for proxy token counting.
    pub fn prompt_text(&self) -> String {
        self.turns.iter().map(|t| t.content.as_str()).collect::<Vec<_>>().join("\n")
    }

    pub fn last_content(&self) -> &str {
        self.turns.last().map(|t| t.content.as_str()).unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Counts came from [`count_tokens`] rather than a provider usage block.
    pub proxy_counts: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderErrorKind {
    Transport,
    Auth,
    RateLimited,
    MalformedResponse,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{kind:?} provider error: {message}")]
pub struct ProviderError {
    pub kind: ProviderErrorKind,
    pub message: String,
}

impl ProviderError {
    pub fn new(kind: ProviderErrorKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        Self::new(ProviderErrorKind::MalformedResponse, message)
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self.kind, ProviderErrorKind::Transport | ProviderErrorKind::RateLimited)
    }
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

pub trait Embedder: Send + Sync {
    /// Identifier recorded in index manifests, e.g. `hash-mock:256`.
    fn id(&self) -> String;

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError>;

    fn embed_one(&self, text: &str) -> Result<Vec<f32>, ProviderError> {
        let mut out = self.embed(&[text.to_string()])?;
        out.pop().ok_or_else(|| ProviderError::malformed("embedder returned no vectors"))
    }
}

impl<T: ChatProvider + ?Sized> ChatProvider for &T {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).complete(request)
    }
}

impl<T: ChatProvider + ?Sized> ChatProvider for Box<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).complete(request)
    }
}

impl<T: Embedder + ?Sized> Embedder for &T {
    fn id(&self) -> String {
        (**self).id()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        (**self).embed(texts)
    }
}

impl<T: Embedder + ?Sized> Embedder for Box<T> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        (**self).embed(texts)
    }
}

/// Sends `request` and books the usage under `stage`.
pub fn complete_and_record(
    chat: &dyn ChatProvider,
    request: &ChatRequest,
    stage: Stage,
    ledger: &mut TokenLedger,
) -> Result<ChatResponse, ProviderError> {
    let response = chat.complete(request)?;
    ledger.record(stage, response.prompt_tokens, response.completion_tokens, response.proxy_counts);
    Ok(response)
}

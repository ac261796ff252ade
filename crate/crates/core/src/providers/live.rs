//! HTTP clients for OpenAI-compatible chat-completion and embedding endpoints.
//!
//! Configuration comes from the environment:
//!
//! | variable          | meaning                                   | default                     |
//! |-------------------|-------------------------------------------|-----------------------------|
//! | `HR4_API_BASE`    | base URL, without the trailing endpoint   | `https://api.openai.com/v1` |
//! | `HR4_API_KEY`     | bearer token                              | required                    |
//! | `HR4_CHAT_MODEL`  | chat model name                           | `gpt-4o-mini`               |
//! | `HR4_EMBED_MODEL` | embedding model name                      | `text-embedding-3-large`    |
//!
//! Key values are never logged.

use std::env;
use std::thread;
use std::time::Duration;

use rand::Rng;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    count_tokens, ChatProvider, ChatRequest, ChatResponse, Embedder, ProviderError, ProviderErrorKind, Temperature,
};

const DEFAULT_BASE: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay: Duration::from_millis(500) }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let exp = self.base_delay.saturating_mul(1 << attempt.min(16));
        let jitter = rand::rng().random_range(0.5..1.5);
        exp.mul_f64(jitter)
    }

    fn run<T>(&self, mut call: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let mut attempt = 0;
        loop {
            match call() {
                Err(e) if e.is_retryable() && attempt + 1 < self.attempts => {
                    log::warn!("provider call failed ({:?}), retrying", e.kind);
                    thread::sleep(self.delay(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Endpoint {
    base: String,
    api_key: String,
    model: String,
}

impl Endpoint {
    fn from_env(model_var: &str, default_model: &str) -> Result<Self, ProviderError> {
        let api_key = env::var("HR4_API_KEY")
            .map_err(|_| ProviderError::new(ProviderErrorKind::Auth, "HR4_API_KEY is not set"))?;
        Ok(Self {
            base: env::var("HR4_API_BASE").unwrap_or_else(|_| DEFAULT_BASE.to_string()),
            api_key,
            model: env::var(model_var).unwrap_or_else(|_| default_model.to_string()),
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base.trim_end_matches('/'), path)
    }
}

fn client() -> Client {
    Client::builder().timeout(Duration::from_secs(120)).build().expect("http client builds")
}

fn post_json(client: &Client, endpoint: &Endpoint, path: &str, body: &Value) -> Result<Value, ProviderError> {
    let response = client
        .post(endpoint.url(path))
        .bearer_auth(&endpoint.api_key)
        .json(body)
        .send()
        .map_err(|e| ProviderError::new(ProviderErrorKind::Transport, e.to_string()))?;
    let status = response.status();
    let text = response.text().map_err(|e| ProviderError::new(ProviderErrorKind::Transport, e.to_string()))?;
    if let Some(kind) = classify_status(status) {
        let snippet: String = text.chars().take(200).collect();
        return Err(ProviderError::new(kind, format!("HTTP {status}: {snippet}")));
    }
    serde_json::from_str(&text).map_err(|e| ProviderError::malformed(format!("invalid JSON body: {e}")))
}

fn classify_status(status: StatusCode) -> Option<ProviderErrorKind> {
    if status.is_success() {
        None
    } else if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
        Some(ProviderErrorKind::Auth)
    } else if status == StatusCode::TOO_MANY_REQUESTS {
        Some(ProviderErrorKind::RateLimited)
    } else if status.is_server_error() {
        Some(ProviderErrorKind::Transport)
    } else {
        Some(ProviderErrorKind::MalformedResponse)
    }
}

pub struct LiveChat {
    client: Client,
    endpoint: Endpoint,
    retry: RetryPolicy,
}

impl LiveChat {
    pub fn from_env() -> Result<Self, ProviderError> {
        Ok(Self {
            client: client(),
            endpoint: Endpoint::from_env("HR4_CHAT_MODEL", "gpt-4o-mini")?,
            retry: RetryPolicy::default(),
        })
    }

    pub fn new(base: &str, api_key: &str, model: &str, retry: RetryPolicy) -> Self {
        Self {
            client: client(),
            endpoint: Endpoint { base: base.into(), api_key: api_key.into(), model: model.into() },
            retry,
        }
    }
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl ChatProvider for LiveChat {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        if request.turns.is_empty() {
            return Err(ProviderError::malformed("empty chat request"));
        }
        let messages: Vec<Value> =
            request.turns.iter().map(|t| json!({"role": t.role.as_str(), "content": t.content})).collect();
        let mut body = json!({"model": self.endpoint.model, "messages": messages});
        if let Temperature::Fixed(t) = request.temperature {
            body["temperature"] = json!(t);
        }
        let value = self.retry.run(|| post_json(&self.client, &self.endpoint, "chat/completions", &body))?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::malformed("response has no choices[0].message.content"))?
            .to_string();
        let usage = value.get("usage").and_then(|u| serde_json::from_value::<Usage>(u.clone()).ok());
        Ok(match usage {
            Some(u) => ChatResponse {
                text,
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
                proxy_counts: false,
            },
            None => ChatResponse {
                prompt_tokens: count_tokens(&request.prompt_text()),
                completion_tokens: count_tokens(&text),
                text,
                proxy_counts: true,
            },
        })
    }
}

pub struct LiveEmbedder {
    client: Client,
    endpoint: Endpoint,
    retry: RetryPolicy,
}

impl LiveEmbedder {
    pub fn from_env() -> Result<Self, ProviderError> {
        Ok(Self {
            client: client(),
            endpoint: Endpoint::from_env("HR4_EMBED_MODEL", "text-embedding-3-large")?,
            retry: RetryPolicy::default(),
        })
    }

    pub fn new(base: &str, api_key: &str, model: &str, retry: RetryPolicy) -> Self {
        Self {
            client: client(),
            endpoint: Endpoint { base: base.into(), api_key: api_key.into(), model: model.into() },
            retry,
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingItem {
    index: usize,
    embedding: Vec<f32>,
}

impl Embedder for LiveEmbedder {
    fn id(&self) -> String {
        format!("live:{}", self.endpoint.model)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::malformed("empty embedding batch"));
        }
        let body = json!({"model": self.endpoint.model, "input": texts});
        let value = self.retry.run(|| post_json(&self.client, &self.endpoint, "embeddings", &body))?;
        let data = value.get("data").cloned().ok_or_else(|| ProviderError::malformed("response has no data array"))?;
        let mut items: Vec<EmbeddingItem> =
            serde_json::from_value(data).map_err(|e| ProviderError::malformed(format!("bad embedding data: {e}")))?;
        if items.len() != texts.len() {
            return Err(ProviderError::malformed(format!("asked for {} embeddings, got {}", texts.len(), items.len())));
        }
        items.sort_by_key(|i| i.index);
        Ok(items.into_iter().map(|i| i.embedding).collect())
    }
}

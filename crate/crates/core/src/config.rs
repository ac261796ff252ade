//! Pipeline parameters and the `key = value` config file format.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("invalid value {value:?} for {key}")]
    BadValue { key: String, value: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Refinement pool bound (N).
    pub pool_size: usize,
    /// Retrieval depth (K).
    pub top_k: usize,
    /// Failure-tracing threshold θ in [0, 1].
    pub theta: f64,
    pub multi_query_n: usize,
    pub max_rounds: u32,
    pub max_turns_per_round: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { pool_size: 3, top_k: 5, theta: 0.8, multi_query_n: 4, max_rounds: 3, max_turns_per_round: 8 }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.pool_size == 0 || self.top_k == 0 || self.multi_query_n == 0 {
            return Err(ConfigError::Invalid("N, K and multi_query_n must be positive".into()));
        }
        if self.pool_size > self.top_k {
            return Err(ConfigError::Invalid(format!("N ({}) must not exceed K ({})", self.pool_size, self.top_k)));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(ConfigError::Invalid(format!("theta {} is outside [0, 1]", self.theta)));
        }
        if self.max_rounds == 0 || self.max_turns_per_round == 0 {
            return Err(ConfigError::Invalid("max_rounds and max_turns_per_round must be positive".into()));
        }
        Ok(())
    }

    /// Applies one setting. Returns `Ok(false)` for keys this struct does not
    /// own so callers can handle their own keys.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue { key: key.into(), value: value.into() })
        }
        match key {
            "N" | "n" | "pool_size" => self.pool_size = num(key, value)?,
            "K" | "k" | "top_k" => self.top_k = num(key, value)?,
            "theta" => self.theta = num(key, value)?,
            "multi_query_n" => self.multi_query_n = num(key, value)?,
            "max_rounds" => self.max_rounds = num(key, value)?,
            "max_turns_per_round" => self.max_turns_per_round = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

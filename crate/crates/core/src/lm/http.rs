//! OpenAI-compatible HTTP transport with bounded exponential backoff.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::warn;

use super::{normalize, ChatBackend, ChatRequest, Embedder, LmError};

pub const API_KEY_ENV: &str = "GIFT_LM_API_KEY";
pub const BASE_URL_ENV: &str = "GIFT_LM_BASE_URL";

/// Attempts per request, including the first.
pub const MAX_ATTEMPTS: u32 = 5;
/// Upper bound on the summed sleep between attempts under the default policy
/// (0.5 + 1 + 2 + 4 seconds).
pub const MAX_TOTAL_BACKOFF: Duration = Duration::from_millis(7_500);

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: MAX_ATTEMPTS,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Sleep before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry.saturating_sub(1))
    }

    pub fn total_backoff(&self) -> Duration {
        (1..self.max_attempts.min(MAX_ATTEMPTS))
            .map(|r| self.delay(r))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub embedding_model: Option<String>,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    120
}

impl HttpConfig {
    /// Base URL and key from `GIFT_LM_BASE_URL` / `GIFT_LM_API_KEY`.
    pub fn from_env(model: impl Into<String>) -> Result<Self, LmError> {
        let base_url = std::env::var(BASE_URL_ENV)
            .map_err(|_| LmError::Config(format!("{BASE_URL_ENV} is not set")))?;
        Ok(HttpConfig {
            base_url,
            model: model.into(),
            embedding_model: None,
            api_key: std::env::var(API_KEY_ENV).ok(),
            timeout_secs: default_timeout_secs(),
        })
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, LmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LmError::Config(e.to_string()))?;
        Ok(HttpBackend {
            config,
            retry: RetryPolicy::default(),
            client,
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn url(&self, path: &str) -> String {
        format!("{}/v1/{path}", self.config.base_url.trim_end_matches('/'))
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, LmError> {
        let url = self.url(path);
        let attempts = self.retry.max_attempts.clamp(1, MAX_ATTEMPTS);
        let mut last_err = LmError::Transport("no attempt made".into());
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            let mut req = self.client.post(&url).json(body);
            if let Some(key) = &self.config.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().map_err(|e| LmError::Transport(e.to_string()))?;
                    if status.is_success() {
                        return serde_json::from_str(&text)
                            .map_err(|e| LmError::Payload(e.to_string()));
                    }
                    let err = LmError::Http {
                        status: status.as_u16(),
                        body: text,
                    };
                    if !(status.as_u16() == 429 || status.is_server_error()) {
                        return Err(err);
                    }
                    warn!(attempt, status = status.as_u16(), "retryable HTTP status");
                    last_err = err;
                }
                Err(e) => {
                    warn!(attempt, error = %e, "transport failure");
                    last_err = LmError::Transport(e.to_string());
                }
            }
        }
        Err(last_err)
    }
}

/// Extracts `choices[0].message.content` from a chat-completions payload.
pub(crate) fn parse_chat_response(v: &Value) -> Result<String, LmError> {
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| LmError::Payload("missing choices[0].message.content".into()))
}

/// Extracts `data[*].embedding`, ordered by `index` when present.
pub(crate) fn parse_embedding_response(v: &Value, n: usize) -> Result<Vec<Vec<f64>>, LmError> {
    let data = v
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| LmError::Payload("missing data array".into()))?;
    let mut rows: Vec<(usize, Vec<f64>)> = data
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let idx = item
                .get("index")
                .and_then(Value::as_u64)
                .map_or(i, |x| x as usize);
            let emb = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| LmError::Payload("missing embedding".into()))?
                .iter()
                .map(|x| {
                    x.as_f64()
                        .ok_or_else(|| LmError::Payload("non-numeric embedding".into()))
                })
                .collect::<Result<Vec<f64>, _>>()?;
            Ok((idx, emb))
        })
        .collect::<Result<_, LmError>>()?;
    if rows.len() != n {
        return Err(LmError::Payload(format!(
            "expected {n} embeddings, got {}",
            rows.len()
        )));
    }
    rows.sort_by_key(|(i, _)| *i);
    Ok(rows.into_iter().map(|(_, v)| normalize(v)).collect())
}

impl ChatBackend for HttpBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, LmError> {
        req.validate()?;
        let mut body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        parse_chat_response(&self.post("chat/completions", &body)?)
    }
}

impl Embedder for HttpBackend {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LmError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let model = self
            .config
            .embedding_model
            .as_deref()
            .unwrap_or(&self.config.model);
        let body = json!({"model": model, "input": texts});
        parse_embedding_response(&self.post("embeddings", &body)?, texts.len())
    }
}

//! Chat-completion and embedding backends.
//!
//! Every backend implements [`ChatBackend`] and/or [`Embedder`]. The HTTP
//! backend talks to any OpenAI-compatible endpoint; [`ReplayBackend`] serves
//! recorded responses; [`OracleBackend`] synthesizes well-formed responses
//! from task fixtures for offline runs; [`CachedBackend`] memoizes and
//! records any of them.

mod cache;
mod embed;
mod http;
mod oracle;
mod replay;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CacheLoad, CachedBackend};
pub use embed::{cosine, normalize, FixtureEmbedder};
pub use http::{HttpBackend, HttpConfig, RetryPolicy, MAX_ATTEMPTS, MAX_TOTAL_BACKOFF};
pub use oracle::{OracleBackend, OracleScript};
pub use replay::{ReplayBackend, ReplayRecord, RequestDigest};

#[derive(Debug, Error)]
pub enum LmError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
    #[error("malformed payload: {0}")]
    Payload(String),
    #[error("no fixture vector for text {0:?}")]
    MissingFixture(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub temperature: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        ChatRequest {
            system: system.into(),
            user: user.into(),
            temperature: 0.0,
            seed: None,
            max_tokens: 2048,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), LmError> {
        if self.system.is_empty() || self.user.is_empty() {
            return Err(LmError::Config(
                "chat request texts must be non-empty".into(),
            ));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LmError::Config("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(LmError::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Content hash over `(system, user, temperature, seed)`.
    pub fn cache_key(&self) -> String {
        let canonical = serde_json::json!({
            "system": self.system,
            "user": self.user,
            "temperature": self.temperature,
            "seed": self.seed,
        });
        sha256_hex(canonical.to_string().as_bytes())
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<String, LmError>;
}

pub trait Embedder: Send + Sync {
    /// One unit-norm vector per input text.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LmError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, req: &ChatRequest) -> Result<String, LmError> {
        (**self).complete(req)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn complete(&self, req: &ChatRequest) -> Result<String, LmError> {
        (**self).complete(req)
    }
}

impl<T: Embedder + ?Sized> Embedder for &T {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LmError> {
        (**self).embed(texts)
    }
}

impl<T: Embedder + ?Sized> Embedder for Box<T> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LmError> {
        (**self).embed(texts)
    }
}

//! Backend boundary: chat generation and paraphrasing.
//!
//! Inference is always external. The crate talks to an OpenAI-compatible
//! endpoint over HTTP, or to one of the deterministic mocks used in tests and
//! offline runs. Every backend implements [`Backend`]; [`CachedBackend`] wraps
//! any of them with a content-addressed response cache.

mod cache;
mod http;
mod mock;
mod paraphrase;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use cache::{CacheKey, CachedBackend};
pub use http::{HttpBackend, RetryPolicy};
pub use mock::{FnBackend, HashMock, ScriptRule, ScriptedMock};
pub use paraphrase::{HttpParaphraser, Paraphraser, RuleParaphraser};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<LlmError> },
    #[error("no scripted response for system={system:?} user={user:?}")]
    NoScriptMatch { system: String, user: String },
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
}

impl LlmError {
    /// Whether a retry could plausibly succeed. 429 and 5xx are transient;
    /// every other 4xx is final.
    pub fn is_transient(&self) -> bool {
        match self {
            LlmError::Status { status, .. } => *status == 429 || *status >= 500,
            LlmError::Transport(_) | LlmError::Timeout => true,
            _ => false,
        }
    }
}

/// One chat completion: a system message followed by a user message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    /// Empty means no system instruction (the blank baseline).
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.user.is_empty() {
            return Err(LlmError::InvalidRequest("user message is empty".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

pub trait Backend: Send + Sync {
    fn generate(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn generate(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).generate(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn generate(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).generate(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpOpenai,
    ScriptedMock,
    HashMock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryConfig {
    #[serde(default = "RetryConfig::default_max_attempts")]
    pub max_attempts: u32,
    /// Initial delay; doubles after each failed attempt.
    #[serde(default = "RetryConfig::default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "RetryConfig::default_max_backoff_ms")]
    pub max_backoff_ms: u64,
}

impl RetryConfig {
    fn default_max_attempts() -> u32 {
        5
    }
    fn default_backoff_ms() -> u64 {
        500
    }
    fn default_max_backoff_ms() -> u64 {
        30_000
    }
}

impl Default for RetryConfig {
    fn default() -> Self {
        RetryConfig {
            max_attempts: Self::default_max_attempts(),
            backoff_ms: Self::default_backoff_ms(),
            max_backoff_ms: Self::default_max_backoff_ms(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default = "BackendConfig::default_model")]
    pub model: String,
    #[serde(default)]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub retry: RetryConfig,
    #[serde(default = "BackendConfig::default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "BackendConfig::default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "BackendConfig::default_timeout_secs")]
    pub timeout_secs: u64,
    /// hash_mock: labels the mock picks from.
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    /// scripted_mock: JSONL file of [`ScriptRule`]s.
    #[serde(default)]
    pub script: Option<PathBuf>,
    /// scripted_mock: reply used when no rule matches.
    #[serde(default)]
    pub default_response: Option<String>,
}

impl BackendConfig {
    fn default_model() -> String {
        "default".to_string()
    }
    fn default_parallelism() -> usize {
        4
    }
    fn default_max_tokens() -> u32 {
        512
    }
    fn default_timeout_secs() -> u64 {
        120
    }

    pub fn new(kind: BackendKind) -> Self {
        BackendConfig {
            kind,
            model: Self::default_model(),
            base_url: None,
            api_key_env: None,
            retry: RetryConfig::default(),
            parallelism: Self::default_parallelism(),
            temperature: 0.0,
            max_tokens: Self::default_max_tokens(),
            timeout_secs: Self::default_timeout_secs(),
            labels: None,
            script: None,
            default_response: None,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.parallelism == 0 {
            return Err(LlmError::Config("parallelism must be positive".into()));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::Config("max_tokens must be positive".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::Config("temperature must be >= 0".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(LlmError::Config("retry.max_attempts must be positive".into()));
        }
        match self.kind {
            BackendKind::HttpOpenai if self.base_url.is_none() => {
                Err(LlmError::Config("http_openai requires base_url".into()))
            }
            BackendKind::ScriptedMock if self.script.is_none() && self.default_response.is_none() => {
                Err(LlmError::Config(
                    "scripted_mock requires script or default_response".into(),
                ))
            }
            BackendKind::HashMock if matches!(&self.labels, Some(l) if l.is_empty()) => {
                Err(LlmError::Config("hash_mock labels must be non-empty".into()))
            }
            _ => Ok(()),
        }
    }

    /// Resolves relative file references against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(script) = &self.script {
            if script.is_relative() {
                self.script = Some(base.join(script));
            }
        }
    }

    /// Builds the bare backend (no cache layer).
    pub fn build(&self) -> Result<Arc<dyn Backend>, LlmError> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::HttpOpenai => Arc::new(HttpBackend::from_config(self)?),
            BackendKind::HashMock => Arc::new(match &self.labels {
                Some(labels) => HashMock::new(labels.clone()),
                None => HashMock::default(),
            }),
            BackendKind::ScriptedMock => {
                let mut mock = match &self.script {
                    Some(path) => ScriptedMock::load(path)?,
                    None => ScriptedMock::new(Vec::new()),
                };
                if let Some(default) = &self.default_response {
                    mock = mock.with_default(default.clone());
                }
                Arc::new(mock)
            }
        })
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParaphraserKind {
    Rules,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParaphraserConfig {
    pub kind: ParaphraserKind,
    /// http: full URL of the paraphrase endpoint.
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default = "ParaphraserConfig::default_candidates")]
    pub num_candidates: u32,
    #[serde(default)]
    pub retry: RetryConfig,
    #[serde(default = "BackendConfig::default_timeout_secs")]
    pub timeout_secs: u64,
}

impl ParaphraserConfig {
    fn default_candidates() -> u32 {
        5
    }

    pub fn build(&self) -> Result<Arc<dyn Paraphraser>, LlmError> {
        match self.kind {
            ParaphraserKind::Rules => Ok(Arc::new(RuleParaphraser)),
            ParaphraserKind::Http => {
                let url = self
                    .url
                    .clone()
                    .ok_or_else(|| LlmError::Config("http paraphraser requires url".into()))?;
                Ok(Arc::new(HttpParaphraser::new(
                    url,
                    self.num_candidates,
                    RetryPolicy::from(&self.retry),
                    Duration::from_secs(self.timeout_secs),
                )?))
            }
        }
    }
}

impl Default for ParaphraserConfig {
    fn default() -> Self {
        ParaphraserConfig {
            kind: ParaphraserKind::Rules,
            url: None,
            num_candidates: Self::default_candidates(),
            retry: RetryConfig::default(),
            timeout_secs: BackendConfig::default_timeout_secs(),
        }
    }
}

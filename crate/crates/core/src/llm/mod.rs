//! Chat-completion boundary.
//!
//! [`ChatBackend`] hides where replies come from: a live HTTP endpoint, a
//! recorded transcript, or one of two oracles that answer from the
//! toolkit's own detector and solver. Only [`BackendKind::Http`] ever
//! opens a connection.

mod http;
mod oracle;
mod transcript;

pub use http::{http_attempts, HttpBackend};
pub use oracle::{OracleSensing, OracleWaterfill};
pub use transcript::{ReplayBackend, Transcript, TranscriptWriter, TRANSCRIPT_FORMAT};

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::prompting::RenderedPrompt;

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("network failure after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },

    #[error("upstream returned HTTP {status}: {body}")]
    Upstream { status: u16, body: String },

    #[error("no recorded response for prompt {fingerprint}")]
    ReplayMiss { fingerprint: String },

    #[error("credential environment variable `{var}` is not set")]
    CredentialMissing { var: String },

    #[error("malformed upstream payload: {0}")]
    MalformedPayload(String),

    #[error("backend configuration: {0}")]
    Config(String),

    #[error("oracle could not answer: {0}")]
    Oracle(String),

    #[error("transcript {path}: {message}")]
    Transcript { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    ReplayFile,
    OracleSensing,
    OracleWaterfill,
}

/// Backend settings. Credentials are never stored here, only the name of
/// the environment variable that holds them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    #[serde(default = "defaults::model_name")]
    pub model_name: String,
    #[serde(default = "defaults::auth_token_env")]
    pub auth_token_env: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "defaults::max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "defaults::timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "defaults::max_retries")]
    pub max_retries: u32,
    #[serde(default = "defaults::backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "defaults::concurrency_limit")]
    pub concurrency_limit: usize,
    /// Transcript served by `ReplayFile`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_path: Option<PathBuf>,
    /// Decision threshold for `OracleSensing`; the sensing harness fills
    /// it in from the Neyman–Pearson threshold when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_threshold_mw: Option<f64>,
}

mod defaults {
    pub fn model_name() -> String {
        "mock".into()
    }
    pub fn auth_token_env() -> String {
        "AIRKIT_API_KEY".into()
    }
    pub fn max_tokens() -> u32 {
        512
    }
    pub fn timeout_ms() -> u64 {
        60_000
    }
    pub fn max_retries() -> u32 {
        3
    }
    pub fn backoff_base_ms() -> u64 {
        500
    }
    pub fn concurrency_limit() -> usize {
        4
    }
}

impl BackendConfig {
    pub fn new(kind: BackendKind) -> Self {
        BackendConfig {
            kind,
            endpoint_url: None,
            model_name: defaults::model_name(),
            auth_token_env: defaults::auth_token_env(),
            temperature: 0.0,
            max_tokens: defaults::max_tokens(),
            timeout_ms: defaults::timeout_ms(),
            max_retries: defaults::max_retries(),
            backoff_base_ms: defaults::backoff_base_ms(),
            concurrency_limit: defaults::concurrency_limit(),
            replay_path: None,
            oracle_threshold_mw: None,
        }
    }

    pub fn http(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        BackendConfig {
            endpoint_url: Some(endpoint_url.into()),
            model_name: model_name.into(),
            ..Self::new(BackendKind::Http)
        }
    }

    pub fn replay(path: impl Into<PathBuf>) -> Self {
        BackendConfig {
            replay_path: Some(path.into()),
            ..Self::new(BackendKind::ReplayFile)
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.concurrency_limit == 0 {
            return Err(LlmError::Config("concurrency_limit must be at least 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::Config("temperature must be a nonnegative number".into()));
        }
        match self.kind {
            BackendKind::Http if self.endpoint_url.is_none() => {
                Err(LlmError::Config("http backend needs endpoint_url".into()))
            }
            BackendKind::ReplayFile if self.replay_path.is_none() => {
                Err(LlmError::Config("replay_file backend needs replay_path".into()))
            }
            _ => Ok(()),
        }
    }

    /// Delay before retry number `attempt + 1`: `backoff_base_ms · 2^attempt`.
    pub fn backoff_delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.backoff_base_ms.saturating_mul(1u64 << attempt.min(20)))
    }

    pub fn is_offline(&self) -> bool {
        self.kind != BackendKind::Http
    }
}

/// One served prompt and its reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub system_text: String,
    pub user_text: String,
    pub response_text: String,
    pub model_name: String,
    pub temperature: f64,
    pub latency_ms: u64,
    pub prompt_fingerprint: String,
    /// RFC 3339, UTC.
    pub timestamp: String,
}

impl ChatExchange {
    pub fn new(prompt: &RenderedPrompt, response_text: String, config: &BackendConfig, latency_ms: u64) -> Self {
        ChatExchange {
            system_text: prompt.system_text.clone(),
            user_text: prompt.user_text.clone(),
            response_text,
            model_name: config.model_name.clone(),
            temperature: config.temperature,
            latency_ms,
            prompt_fingerprint: prompt.fingerprint.clone(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<ChatExchange, LlmError>;

    fn config(&self) -> &BackendConfig;
}

pub fn build_backend(config: &BackendConfig) -> Result<Box<dyn ChatBackend>, LlmError> {
    config.validate()?;
    Ok(match config.kind {
        BackendKind::Http => Box::new(HttpBackend::new(config.clone())?),
        BackendKind::ReplayFile => Box::new(ReplayBackend::new(config.clone())?),
        BackendKind::OracleSensing => Box::new(OracleSensing::new(config.clone())?),
        BackendKind::OracleWaterfill => Box::new(OracleWaterfill::new(config.clone())),
    })
}

/// One-shot convenience: builds the backend and serves a single prompt.
pub fn complete(config: &BackendConfig, prompt: &RenderedPrompt) -> Result<String, LlmError> {
    Ok(build_backend(config)?.complete(prompt)?.response_text)
}

/// Serves `prompts` with at most `concurrency_limit` requests in flight.
/// Results come back in prompt order.
pub fn complete_many(backend: &dyn ChatBackend, prompts: &[RenderedPrompt]) -> Vec<Result<ChatExchange, LlmError>> {
    let workers = backend.config().concurrency_limit.clamp(1, prompts.len().max(1));
    if workers == 1 {
        return prompts.iter().map(|p| backend.complete(p)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<ChatExchange, LlmError>>>> =
        Mutex::new((0..prompts.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(prompt) = prompts.get(i) else { break };
                let result = backend.complete(prompt);
                slots.lock().expect("result slots poisoned")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every prompt served"))
        .collect()
}

/// Serves every prompt and appends each exchange (or an error marker) to
/// a new transcript at `path`. The file can be replayed immediately.
pub fn record_session(
    backend: &dyn ChatBackend,
    prompts: &[RenderedPrompt],
    path: impl Into<PathBuf>,
) -> Result<Vec<Result<ChatExchange, LlmError>>, LlmError> {
    let writer = TranscriptWriter::create(path)?;
    let results = complete_many(backend, prompts);
    for (prompt, result) in prompts.iter().zip(&results) {
        match result {
            Ok(exchange) => writer.append(exchange)?,
            Err(e) => writer.append_error(prompt, backend.config(), e)?,
        }
    }
    Ok(results)
}

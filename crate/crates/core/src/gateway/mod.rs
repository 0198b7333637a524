//! Completion backends and model-output parsing.
//!
//! [`Gateway`] wraps one backend (a chat-completions HTTP endpoint or a
//! local mock) with an optional response cache and bounded fan-out.
//! Results always come back in submission order.

mod cache;
mod http;
mod mock;
mod parse;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabelSet, LabelSpace};
use crate::prompt::{PromptMode, RenderedPrompt};

pub use cache::ResponseCache;
pub use http::{HttpChatBackend, HttpConfig};
pub use mock::{MockBackend, MockSpec, PriorBiased};
pub use parse::{parse_assessment, parse_label_output, parse_prediction, ParseError, ParsedLabels};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid backend config: {0}")]
    Config(String),
    #[error("missing auth token: environment variable {0} is not set")]
    MissingToken(String),
    #[error("authentication rejected (status {0})")]
    Auth(u16),
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("transport failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("malformed response: {0}")]
    Response(String),
    #[error("scripted mock has no entry for `{0}`")]
    Script(String),
    #[error("cache io error: {0}")]
    Cache(String),
}

impl GatewayError {
    /// Errors a retry cannot fix.
    pub fn is_permanent(&self) -> bool {
        !matches!(self, GatewayError::Exhausted { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Sleep before retry `i` is `backoff_ms[min(i, len - 1)]`.
    pub backoff_ms: Vec<u64>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            backoff_ms: vec![500, 2000, 8000],
        }
    }
}

impl RetryPolicy {
    pub fn delay_ms(&self, retry: usize) -> u64 {
        match self.backoff_ms.as_slice() {
            [] => 0,
            b => b[retry.min(b.len() - 1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestParams {
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_max_tokens() -> u32 {
    256
}

fn default_timeout() -> u64 {
    60
}

impl Default for RequestParams {
    fn default() -> Self {
        RequestParams {
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            timeout_secs: default_timeout(),
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BackendKind {
    HttpChat(HttpConfig),
    Mock { mock: MockSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub backend: BackendKind,
    #[serde(default)]
    pub params: RequestParams,
    /// Maximum in-flight requests.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// On-disk response cache for HTTP backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub bypass_cache: bool,
}

fn default_concurrency() -> usize {
    4
}

impl BackendConfig {
    pub fn mock(spec: MockSpec) -> Self {
        BackendConfig {
            backend: BackendKind::Mock { mock: spec },
            params: RequestParams::default(),
            concurrency: default_concurrency(),
            cache_dir: None,
            bypass_cache: false,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.params.temperature.is_nan() || self.params.temperature < 0.0 {
            return Err(GatewayError::Config("temperature must be >= 0".into()));
        }
        if self.concurrency == 0 {
            return Err(GatewayError::Config("concurrency must be >= 1".into()));
        }
        if self.params.retry.max_attempts == 0 || self.params.retry.max_attempts > 20 {
            return Err(GatewayError::Config(
                "retry.max_attempts must be in 1..=20".into(),
            ));
        }
        Ok(())
    }
}

/// What the engine knows about a query; mocks use it, HTTP backends ignore
/// it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryContext {
    pub example_id: String,
    pub mode: PromptMode,
    /// Label shown for the query in the prompt, if any.
    pub shown: Option<LabelSet>,
    /// The label the query "should" carry under the run's perspective.
    pub reference: LabelSet,
}

#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a RenderedPrompt,
    pub context: &'a QueryContext,
    pub space: &'a LabelSpace,
    /// 0 for the first request; re-requests after parse failures count up
    /// and skip the cache.
    pub attempt: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    /// Raw model output, verbatim.
    pub text: String,
    pub usage: Usage,
    pub latency_ms: u64,
    /// Transport attempts spent on this completion.
    pub attempts: u32,
    pub cached: bool,
}

pub trait Backend: Send + Sync {
    /// Model identity used for cache keys and manifests.
    fn model_id(&self) -> String;

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, GatewayError>;
}

pub struct Gateway {
    backend: Box<dyn Backend>,
    cache: Option<ResponseCache>,
    bypass_cache: bool,
    concurrency: usize,
}

impl Gateway {
    pub fn from_config(config: &BackendConfig, space: &LabelSpace) -> Result<Self, GatewayError> {
        config.validate()?;
        let (backend, cache): (Box<dyn Backend>, _) = match &config.backend {
            BackendKind::HttpChat(http) => {
                let cache = config
                    .cache_dir
                    .as_ref()
                    .map(ResponseCache::new)
                    .transpose()?;
                (
                    Box::new(HttpChatBackend::new(http.clone(), config.params.clone())?),
                    cache,
                )
            }
            BackendKind::Mock { mock } => (Box::new(MockBackend::new(mock.clone(), space)?), None),
        };
        Ok(Gateway {
            backend,
            cache,
            bypass_cache: config.bypass_cache,
            concurrency: config.concurrency,
        })
    }

    pub fn with_backend(backend: Box<dyn Backend>, concurrency: usize) -> Self {
        Gateway {
            backend,
            cache: None,
            bypass_cache: false,
            concurrency: concurrency.max(1),
        }
    }

    pub fn model_id(&self) -> String {
        self.backend.model_id()
    }

    pub fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, GatewayError> {
        if request.prompt.text.is_empty() {
            return Err(GatewayError::Config("empty prompt".into()));
        }
        let model = self.backend.model_id();
        let use_cache = !self.bypass_cache && request.attempt == 0;
        if let (Some(cache), true) = (&self.cache, use_cache) {
            if let Some(hit) = cache.get(&model, &request.prompt.fingerprint)? {
                return Ok(hit);
            }
        }
        let completion = self.backend.complete(request)?;
        if let Some(cache) = &self.cache {
            cache.put(&model, &request.prompt.fingerprint, &completion)?;
        }
        Ok(completion)
    }

    /// Completes every request with at most `concurrency` in flight. The
    /// output is index-aligned with `requests`.
    pub fn complete_many(
        &self,
        requests: &[CompletionRequest<'_>],
    ) -> Vec<Result<Completion, GatewayError>> {
        let workers = self.concurrency.min(requests.len());
        if workers <= 1 {
            return requests.iter().map(|r| self.complete(r)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<Completion, GatewayError>>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= requests.len() {
                        break;
                    }
                    let result = self.complete(&requests[i]);
                    *slots[i].lock().expect("slot lock") = Some(result);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| {
                s.into_inner()
                    .expect("slot lock")
                    .expect("every slot filled")
            })
            .collect()
    }
}

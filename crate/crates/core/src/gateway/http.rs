use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, Completion, CompletionRequest, GatewayError, RequestParams, Usage};

/// An OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL (`.../v1`) or the full `.../chat/completions` URL.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token; no auth header when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_env: Option<String>,
}

impl HttpConfig {
    pub fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

pub struct HttpChatBackend {
    config: HttpConfig,
    params: RequestParams,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

enum Failure {
    Retryable(String, Option<Duration>),
    Permanent(GatewayError),
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<UsageBody>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct UsageBody {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpChatBackend {
    pub fn new(config: HttpConfig, params: RequestParams) -> Result<Self, GatewayError> {
        let token = match &config.token_env {
            Some(var) => {
                Some(std::env::var(var).map_err(|_| GatewayError::MissingToken(var.clone()))?)
            }
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(params.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(HttpChatBackend {
            config,
            params,
            token,
            client,
        })
    }

    pub fn request_body(&self, system: &str, user: &str) -> serde_json::Value {
        let mut messages = Vec::new();
        if !system.is_empty() {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": user}));
        json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.params.temperature,
            "max_tokens": self.params.max_tokens,
        })
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<(String, Usage), Failure> {
        let mut req = self.client.post(self.config.url()).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| Failure::Retryable(e.to_string(), None))?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = resp
            .text()
            .map_err(|e| Failure::Retryable(e.to_string(), None))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(Failure::Permanent(GatewayError::Auth(status))),
            408 | 429 => {
                return Err(Failure::Retryable(
                    format!("status {status}: {text}"),
                    retry_after,
                ))
            }
            500..=599 => return Err(Failure::Retryable(format!("status {status}: {text}"), None)),
            _ => {
                return Err(Failure::Permanent(GatewayError::Rejected {
                    status,
                    body: text,
                }))
            }
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| Failure::Permanent(GatewayError::Response(e.to_string())))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Failure::Permanent(GatewayError::Response("no choices".into())))?;
        let usage = parsed
            .usage
            .map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            })
            .unwrap_or_default();
        Ok((content, usage))
    }
}

impl Backend for HttpChatBackend {
    fn model_id(&self) -> String {
        self.config.model.clone()
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<Completion, GatewayError> {
        let body = self.request_body(&request.prompt.system, &request.prompt.text);
        let policy = &self.params.retry;
        let start = Instant::now();
        let mut last = String::new();
        for attempt in 1..=policy.max_attempts {
            match self.attempt(&body) {
                Ok((text, usage)) => {
                    return Ok(Completion {
                        text,
                        usage,
                        latency_ms: start.elapsed().as_millis() as u64,
                        attempts: attempt,
                        cached: false,
                    })
                }
                Err(Failure::Permanent(e)) => return Err(e),
                Err(Failure::Retryable(cause, hint)) => {
                    log::warn!("attempt {attempt} to {} failed: {cause}", self.config.url());
                    last = cause;
                    if attempt < policy.max_attempts {
                        let wait = Duration::from_millis(policy.delay_ms(attempt as usize - 1));
                        std::thread::sleep(hint.map_or(wait, |h| h.max(wait)));
                    }
                }
            }
        }
        Err(GatewayError::Exhausted {
            attempts: policy.max_attempts,
            last,
        })
    }
}

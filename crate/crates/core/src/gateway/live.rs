//! HTTP chat-completion provider speaking the common `/v1/chat/completions` protocol.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;
use tracing::{debug, warn};

use super::chat::{canonical_digest, ChatProvider, ChatRequest, ChatResponse, GatewayError, ProviderKind};

pub const ENV_API_KEY: &str = "LLM_API_KEY";
pub const ENV_BASE_URL: &str = "LLM_BASE_URL";
pub const ENV_MODEL: &str = "LLM_MODEL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com";

/// Retries transport failures, 429 and 5xx responses with doubling delays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): base, 2*base, 4*base, ...
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry.saturating_sub(1))
    }
}

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub base_url: String,
    pub api_key: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl LiveConfig {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: api_key.into(),
            timeout: Duration::from_secs(300),
            retry: RetryPolicy::default(),
        }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

pub struct LiveProvider {
    config: LiveConfig,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

impl LiveProvider {
    pub fn new(config: LiveConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &LiveConfig {
        &self.config
    }

    /// JSON body sent on the wire.
    pub fn wire_body(req: &ChatRequest) -> serde_json::Value {
        let messages: Vec<_> = req
            .messages
            .iter()
            .map(|m| json!({ "role": m.role.as_str(), "content": m.content }))
            .collect();
        let mut body = json!({
            "model": req.model_id,
            "temperature": req.temperature,
            "messages": messages,
        });
        if let Some(max) = req.max_response_tokens {
            body["max_tokens"] = json!(max);
        }
        body
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, Attempt> {
        let response = self
            .client
            .post(self.config.endpoint())
            .bearer_auth(&self.config.api_key)
            .json(body)
            .send()
            .map_err(|e| Attempt::Retryable(GatewayError::Transport(e.to_string())))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| Attempt::Retryable(GatewayError::Transport(e.to_string())))?;
        if !status.is_success() {
            let err = GatewayError::Status {
                status: status.as_u16(),
                attempts: 0,
                body: text.chars().take(500).collect(),
            };
            return if status.as_u16() == 429 || status.is_server_error() {
                Err(Attempt::Retryable(err))
            } else {
                Err(Attempt::Fatal(err))
            };
        }
        let parsed: CompletionBody =
            serde_json::from_str(&text).map_err(|e| Attempt::Fatal(GatewayError::MalformedBody(e.to_string())))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Attempt::Fatal(GatewayError::MalformedBody("missing choices[0].message.content".into())))
    }
}

enum Attempt {
    Retryable(GatewayError),
    Fatal(GatewayError),
}

fn with_attempts(err: GatewayError, attempts: u32) -> GatewayError {
    match err {
        GatewayError::Status { status, body, .. } => GatewayError::Status { status, attempts, body },
        other => other,
    }
}

impl ChatProvider for LiveProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let body = Self::wire_body(req);
        let digest = canonical_digest(req);
        let mut retry = 0;
        loop {
            match self.attempt(&body) {
                Ok(content) => {
                    return Ok(ChatResponse {
                        content,
                        request_digest: digest,
                        provider: ProviderKind::Live,
                    })
                }
                Err(Attempt::Fatal(err)) => return Err(with_attempts(err, retry + 1)),
                Err(Attempt::Retryable(err)) => {
                    if retry >= self.config.retry.max_retries {
                        warn!(%digest, attempts = retry + 1, "giving up: {err}");
                        return Err(with_attempts(err, retry + 1));
                    }
                    retry += 1;
                    let delay = self.config.retry.delay(retry);
                    debug!(%digest, retry, ?delay, "retrying after: {err}");
                    std::thread::sleep(delay);
                }
            }
        }
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::Live
    }
}

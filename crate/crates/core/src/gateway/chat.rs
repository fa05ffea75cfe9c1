//! Chat-completion request/response types and the provider abstraction.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_TEMPERATURE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

impl ChatRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ChatRole::System => "system",
            ChatRole::User => "user",
            ChatRole::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_response_tokens: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RequestError {
    #[error("request has no messages")]
    NoMessages,
    #[error("temperature {0} is outside [0, 1]")]
    Temperature(f64),
    #[error("message {0} ({1}) has empty content")]
    EmptyContent(usize, &'static str),
}

impl ChatRequest {
    /// New request at the default temperature of 0.2.
    pub fn new(model_id: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model_id: model_id.into(),
            temperature: DEFAULT_TEMPERATURE,
            messages,
            max_response_tokens: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<(), RequestError> {
        if self.messages.is_empty() {
            return Err(RequestError::NoMessages);
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(RequestError::Temperature(self.temperature));
        }
        for (i, m) in self.messages.iter().enumerate() {
            if m.role != ChatRole::System && m.content.trim().is_empty() {
                return Err(RequestError::EmptyContent(i, m.role.as_str()));
            }
        }
        Ok(())
    }

    /// Content of the final user message, if any.
    pub fn last_user_message(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == ChatRole::User)
            .map(|m| m.content.as_str())
    }

    /// Canonical text that the request digest is computed over: fixed field
    /// order, temperature at two decimals, LF line endings, length-prefixed
    /// message bodies.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        out.push_str("model_id:");
        out.push_str(&normalize_newlines(&self.model_id));
        out.push('\n');
        out.push_str(&format!("temperature:{:.2}\n", self.temperature));
        for m in &self.messages {
            let content = normalize_newlines(&m.content);
            out.push_str(&format!("message:{}:{}\n", m.role.as_str(), content.len()));
            out.push_str(&content);
            out.push('\n');
        }
        out
    }
}

fn normalize_newlines(text: &str) -> String {
    text.replace("\r\n", "\n").replace('\r', "\n")
}

/// Lowercase hex SHA-256 of the request's canonical text (64 characters).
pub fn canonical_digest(req: &ChatRequest) -> String {
    let hash = Sha256::digest(req.canonical_text().as_bytes());
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn is_digest(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Live,
    Replay,
    Scripted,
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderKind::Live => "live",
            ProviderKind::Replay => "replay",
            ProviderKind::Scripted => "scripted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub request_digest: String,
    pub provider: ProviderKind,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(#[from] RequestError),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned HTTP {status} after {attempts} attempt(s): {body}")]
    Status { status: u16, attempts: u32, body: String },
    #[error("malformed response body: {0}")]
    MalformedBody(String),
    #[error("replay cache miss for digest {digest} (last user message: {preview:?}); re-record this audit against a live endpoint")]
    CacheMiss { digest: String, preview: String },
    #[error("replay store {path}: corrupt record at byte offset {offset}: {reason}")]
    CorruptStore {
        path: String,
        offset: usize,
        reason: String,
    },
    #[error("replay store {path}: {source}")]
    Storage {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scripted provider failure: {0}")]
    Scripted(String),
}

/// A chat-completion backend. Implementations must tolerate concurrent calls.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError>;

    fn kind(&self) -> ProviderKind;
}

impl<P: ChatProvider + ?Sized> ChatProvider for &P {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(req)
    }

    fn kind(&self) -> ProviderKind {
        (**self).kind()
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for Box<P> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(req)
    }

    fn kind(&self) -> ProviderKind {
        (**self).kind()
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for std::sync::Arc<P> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(req)
    }

    fn kind(&self) -> ProviderKind {
        (**self).kind()
    }
}

/// Provider backed by a closure over the request. Used for scripted agents.
pub struct FnProvider<F> {
    respond: F,
}

impl<F> FnProvider<F>
where
    F: Fn(&ChatRequest) -> Result<String, String> + Send + Sync,
{
    pub fn new(respond: F) -> Self {
        Self { respond }
    }
}

impl<F> ChatProvider for FnProvider<F>
where
    F: Fn(&ChatRequest) -> Result<String, String> + Send + Sync,
{
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let content = (self.respond)(req).map_err(GatewayError::Scripted)?;
        Ok(ChatResponse {
            content,
            request_digest: canonical_digest(req),
            provider: ProviderKind::Scripted,
        })
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::Scripted
    }
}

/// Wraps a provider and counts calls that reach it.
pub struct CountingProvider<P> {
    inner: P,
    calls: AtomicUsize,
}

impl<P: ChatProvider> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: ChatProvider> ChatProvider for CountingProvider<P> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(req)
    }

    fn kind(&self) -> ProviderKind {
        self.inner.kind()
    }
}

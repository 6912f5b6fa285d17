//! Provider-agnostic chat completion with schema-checked structured output,
//! record/replay fixtures and token accounting.
//!
//! Requests are identified by the SHA-256 of their canonical JSON form. In
//! [`FixtureMode::Replay`] the gateway only ever reads the fixture store; it
//! holds no provider handle at all, so a replayed run cannot reach the network.

mod fixtures;
mod provider;
mod transcript;
mod usage;

use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::util::{canonical_json, sha256_hex};

pub use fixtures::{FixtureMode, FixtureStore, StoredResponse};
pub use provider::{CountingProvider, HttpProvider, HttpProviderConfig, Provider, ProviderReply};
pub use transcript::{Transcript, TranscriptEntry};
pub use usage::{usage_report, usage_report_from_entries, ModelPrice, PriceTable, UsageReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

/// An image attached to a message, identified by content digest.
///
/// Only the digest and media type take part in request identity; the bytes
/// travel alongside for providers that need them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageRef {
    pub digest: String,
    pub media_type: String,
    #[serde(skip)]
    pub data: Option<Arc<Vec<u8>>>,
}

impl PartialEq for ImageRef {
    fn eq(&self, other: &Self) -> bool {
        self.digest == other.digest && self.media_type == other.media_type
    }
}

impl ImageRef {
    pub fn from_bytes(media_type: &str, bytes: Vec<u8>) -> Self {
        Self {
            digest: sha256_hex(&bytes),
            media_type: media_type.to_string(),
            data: Some(Arc::new(bytes)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<ImageRef>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self { role: MessageRole::System, text: text.into(), images: Vec::new() }
    }
    pub fn user(text: impl Into<String>) -> Self {
        Self { role: MessageRole::User, text: text.into(), images: Vec::new() }
    }
    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: MessageRole::Assistant, text: text.into(), images: Vec::new() }
    }
    pub fn with_images(mut self, images: Vec<ImageRef>) -> Self {
        self.images = images;
        self
    }
}

/// Structured-output descriptor: a named JSON Schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSchema {
    pub name: String,
    pub schema: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<OutputSchema>,
    #[serde(default)]
    pub temperature: f64,
}

impl ChatRequest {
    /// Engine-issued requests always run at temperature 0.
    pub fn new(model_id: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self { model_id: model_id.into(), messages, schema: None, temperature: 0.0 }
    }

    pub fn with_schema(mut self, name: &str, schema: Value) -> Self {
        self.schema = Some(OutputSchema { name: name.to_string(), schema });
        self
    }

    /// Canonical identity of the request: key-sorted JSON, message text verbatim.
    pub fn digest(&self) -> String {
        let json = canonical_json(self).expect("chat request serializes");
        sha256_hex(json.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn add(&mut self, other: Usage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
    }
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structured: Option<Value>,
    pub usage: Usage,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("no fixture recorded for request digest {digest}")]
    FixtureMiss { digest: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned status {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("schema violation in stage {stage}: {detail}")]
    SchemaViolation { stage: String, detail: String },
    #[error("invalid output schema: {0}")]
    InvalidSchema(String),
    #[error("gateway not configured: {0}")]
    NotConfigured(&'static str),
    #[error("fixture store i/o: {0}")]
    Io(String),
}

impl GatewayError {
    /// Short classification name used in run results.
    pub fn kind(&self) -> &'static str {
        match self {
            GatewayError::FixtureMiss { .. } => "FixtureMiss",
            GatewayError::Transport(_) => "TransportError",
            GatewayError::Provider { .. } => "ProviderError",
            GatewayError::SchemaViolation { .. } => "SchemaViolation",
            GatewayError::InvalidSchema(_) => "InvalidSchema",
            GatewayError::NotConfigured(_) => "NotConfigured",
            GatewayError::Io(_) => "FixtureIo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Extra attempts after a transport failure.
    pub transport_retries: u32,
    pub backoff_ms: u64,
    /// Reprompts after a schema violation.
    pub schema_reprompts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { transport_retries: 2, backoff_ms: 250, schema_reprompts: 1 }
    }
}

pub struct Gateway {
    mode: FixtureMode,
    store: Option<Arc<FixtureStore>>,
    provider: Option<Arc<dyn Provider>>,
    retry: RetryPolicy,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("mode", &self.mode).field("retry", &self.retry).finish()
    }
}

impl Gateway {
    pub fn replay(store: Arc<FixtureStore>) -> Self {
        Self { mode: FixtureMode::Replay, store: Some(store), provider: None, retry: RetryPolicy::default() }
    }

    pub fn record(store: Arc<FixtureStore>, provider: Arc<dyn Provider>) -> Self {
        Self { mode: FixtureMode::Record, store: Some(store), provider: Some(provider), retry: RetryPolicy::default() }
    }

    pub fn live(provider: Arc<dyn Provider>) -> Self {
        Self { mode: FixtureMode::Live, store: None, provider: Some(provider), retry: RetryPolicy::default() }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn mode(&self) -> FixtureMode {
        self.mode
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        self.retry
    }

    /// One raw completion. Never validates structure.
    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let digest = request.digest();
        match self.mode {
            FixtureMode::Replay => {
                let store = self.store.as_ref().ok_or(GatewayError::NotConfigured("fixture store"))?;
                let stored = store.get(&digest).ok_or(GatewayError::FixtureMiss { digest })?;
                Ok(ChatResponse { text: stored.text, structured: None, usage: stored.usage })
            }
            FixtureMode::Record => {
                let store = self.store.as_ref().ok_or(GatewayError::NotConfigured("fixture store"))?;
                let reply = self.send_with_retry(request)?;
                store
                    .put(request, &StoredResponse { text: reply.text.clone(), usage: reply.usage })
                    .map_err(|e| GatewayError::Io(e.to_string()))?;
                Ok(ChatResponse { text: reply.text, structured: None, usage: reply.usage })
            }
            FixtureMode::Live => {
                let reply = self.send_with_retry(request)?;
                Ok(ChatResponse { text: reply.text, structured: None, usage: reply.usage })
            }
        }
    }

    fn send_with_retry(&self, request: &ChatRequest) -> Result<ProviderReply, GatewayError> {
        let provider = self.provider.as_ref().ok_or(GatewayError::NotConfigured("provider"))?;
        let mut attempt = 0;
        loop {
            match provider.send(request) {
                Err(GatewayError::Transport(msg)) if attempt < self.retry.transport_retries => {
                    attempt += 1;
                    tracing::warn!(attempt, "transport error, retrying: {msg}");
                    std::thread::sleep(Duration::from_millis(self.retry.backoff_ms * u64::from(attempt)));
                }
                other => return other,
            }
        }
    }
}

/// Result of a schema-constrained completion.
#[derive(Debug, Clone)]
pub struct Structured<T> {
    pub value: T,
    pub raw: Value,
    pub retry_count: u32,
    pub transcript_id: String,
}

/// A gateway bound to one transcript stream.
#[derive(Clone, Copy)]
pub struct Session<'a> {
    pub gateway: &'a Gateway,
    pub transcript: &'a Transcript,
}

impl<'a> Session<'a> {
    pub fn new(gateway: &'a Gateway, transcript: &'a Transcript) -> Self {
        Self { gateway, transcript }
    }

    pub fn complete(&self, stage: &str, request: &ChatRequest) -> Result<(ChatResponse, String), GatewayError> {
        let result = self.gateway.complete(request);
        let id = self.transcript.record(stage, request, &result);
        result.map(|r| (r, id))
    }

    /// Completion whose reply must validate against the request's schema.
    ///
    /// On a violation the conversation is extended with the bad reply and the
    /// validation error, and re-sent up to the policy's reprompt budget; after
    /// that the call fails with [`GatewayError::SchemaViolation`].
    pub fn complete_structured<T: DeserializeOwned>(
        &self,
        stage: &str,
        request: &ChatRequest,
    ) -> Result<Structured<T>, GatewayError> {
        let schema = request
            .schema
            .as_ref()
            .ok_or_else(|| GatewayError::InvalidSchema("request carries no schema".into()))?;
        let validator = jsonschema::validator_for(&schema.schema)
            .map_err(|e| GatewayError::InvalidSchema(e.to_string()))?;

        let mut current = request.clone();
        let mut retry_count = 0;
        loop {
            let result = self.gateway.complete(&current);
            let response = match result {
                Ok(r) => r,
                Err(e) => {
                    self.transcript.record(stage, &current, &Err(e.clone()));
                    return Err(e);
                }
            };
            let checked = parse_json_reply(&response.text).and_then(|value| {
                if let Some(err) = validator.iter_errors(&value).next() {
                    return Err(format!("{} at {}", err, err.instance_path));
                }
                serde_json::from_value::<T>(value.clone())
                    .map(|typed| (typed, value))
                    .map_err(|e| e.to_string())
            });
            match checked {
                Ok((value, raw)) => {
                    let response = ChatResponse { structured: Some(raw.clone()), ..response };
                    let id = self.transcript.record(stage, &current, &Ok(response));
                    return Ok(Structured { value, raw, retry_count, transcript_id: id });
                }
                Err(detail) => {
                    self.transcript.record(stage, &current, &Ok(response.clone()));
                    if retry_count >= self.gateway.retry.schema_reprompts {
                        return Err(GatewayError::SchemaViolation { stage: stage.to_string(), detail });
                    }
                    retry_count += 1;
                    current.messages.push(ChatMessage::assistant(response.text));
                    current.messages.push(ChatMessage::user(format!(
                        "Your previous reply did not satisfy the required JSON schema ({detail}). \
                         Reply again with only a JSON object that satisfies the schema."
                    )));
                }
            }
        }
    }
}

/// Parses a model reply as JSON, tolerating a surrounding markdown code fence.
pub fn parse_json_reply(text: &str) -> Result<Value, String> {
    let trimmed = text.trim();
    let body = if let Some(rest) = trimmed.strip_prefix("```") {
        let rest = rest.trim_start_matches("json");
        rest.trim_end().trim_end_matches("```").trim()
    } else {
        trimmed
    };
    serde_json::from_str(body).map_err(|e| format!("reply is not valid JSON: {e}"))
}

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatRequest, GatewayError, MessageRole, Usage};

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderReply {
    pub text: String,
    pub usage: Usage,
}

/// Anything that can answer a chat request.
pub trait Provider: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ProviderReply, GatewayError>;
}

/// Wraps a provider and counts how many requests reach it.
pub struct CountingProvider<P> {
    inner: P,
    calls: Arc<AtomicUsize>,
}

impl<P: Provider> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self { inner, calls: Arc::new(AtomicUsize::new(0)) }
    }

    pub fn counter(&self) -> Arc<AtomicUsize> {
        self.calls.clone()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<P: Provider> Provider for CountingProvider<P> {
    fn send(&self, request: &ChatRequest) -> Result<ProviderReply, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.send(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    /// Base URL of a chat-completions compatible API, e.g. `https://api.openai.com/v1`.
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

/// Chat-completions over HTTP with image attachments as data URLs.
pub struct HttpProvider {
    config: HttpProviderConfig,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Self { config, agent }
    }

    /// Request body in chat-completions form.
    pub fn wire_body(request: &ChatRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    MessageRole::System => "system",
                    MessageRole::User => "user",
                    MessageRole::Assistant => "assistant",
                };
                if m.images.is_empty() {
                    return json!({"role": role, "content": m.text});
                }
                let mut parts = vec![json!({"type": "text", "text": m.text})];
                for img in &m.images {
                    if let Some(data) = &img.data {
                        let b64 = base64::engine::general_purpose::STANDARD.encode(data.as_slice());
                        parts.push(json!({
                            "type": "image_url",
                            "image_url": {"url": format!("data:{};base64,{b64}", img.media_type)}
                        }));
                    }
                }
                json!({"role": role, "content": parts})
            })
            .collect();
        let mut body = json!({
            "model": request.model_id,
            "temperature": request.temperature,
            "messages": messages,
        });
        if let Some(schema) = &request.schema {
            body["response_format"] = json!({
                "type": "json_schema",
                "json_schema": {"name": schema.name, "schema": schema.schema}
            });
        }
        body
    }

    /// Extracts text and usage from a chat-completions reply.
    pub fn parse_reply(body: &str) -> Result<ProviderReply, GatewayError> {
        let v: Value = serde_json::from_str(body)
            .map_err(|e| GatewayError::Transport(format!("unparseable provider reply: {e}")))?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| GatewayError::Transport("provider reply has no message content".into()))?
            .to_string();
        let usage = Usage {
            prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        };
        Ok(ProviderReply { text, usage })
    }
}

impl Provider for HttpProvider {
    fn send(&self, request: &ChatRequest) -> Result<ProviderReply, GatewayError> {
        let key = std::env::var(&self.config.api_key_env)
            .map_err(|_| GatewayError::NotConfigured("API key environment variable"))?;
        let url = format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'));
        let body = serde_json::to_string(&Self::wire_body(request)).expect("body serializes");
        let mut resp = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {key}"))
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        if status != 200 {
            return Err(GatewayError::Provider { status, body: text });
        }
        Self::parse_reply(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_gateway::{ChatMessage, ImageRef};

    #[test]
    fn wire_body_carries_schema_and_images() {
        let req = ChatRequest::new(
            "gpt",
            vec![
                ChatMessage::system("s"),
                ChatMessage::user("u").with_images(vec![ImageRef::from_bytes("image/png", vec![1, 2, 3])]),
            ],
        )
        .with_schema("out", json!({"type": "object"}));
        let body = HttpProvider::wire_body(&req);
        assert_eq!(body["temperature"], json!(0.0));
        assert_eq!(body["messages"][0]["content"], json!("s"));
        assert_eq!(body["messages"][1]["content"][1]["image_url"]["url"], json!("data:image/png;base64,AQID"));
        assert_eq!(body["response_format"]["json_schema"]["name"], json!("out"));
    }

    #[test]
    fn parse_reply_reads_usage() {
        let r = HttpProvider::parse_reply(
            r#"{"choices":[{"message":{"content":"hi"}}],"usage":{"prompt_tokens":7,"completion_tokens":3}}"#,
        )
        .unwrap();
        assert_eq!(r.text, "hi");
        assert_eq!(r.usage, Usage { prompt_tokens: 7, completion_tokens: 3 });
        assert!(HttpProvider::parse_reply("{}").is_err());
    }
}

//! Chat-completions HTTP backend.

use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatRequest, GatewayError, ModelBackend, ModelReply};
use crate::frames::FrameStore;

/// Transient failures retried before giving up.
pub const DEFAULT_NETWORK_RETRIES: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    #[serde(skip)]
    pub api_key: Option<String>,
    pub network_retries: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: "default".into(),
            api_key_env: None,
            api_key: None,
            network_retries: DEFAULT_NETWORK_RETRIES,
            backoff_ms: 500,
            timeout_secs: 120,
        }
    }
}

impl HttpBackendConfig {
    /// Fills `api_key` from the configured environment variable.
    pub fn resolve_api_key(mut self) -> Self {
        if self.api_key.is_none() {
            self.api_key = self
                .api_key_env
                .as_deref()
                .and_then(|var| std::env::var(var).ok())
                .filter(|k| !k.is_empty());
        }
        self
    }
}

pub struct HttpBackend {
    id: String,
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
    frames: Option<Arc<FrameStore>>,
}

enum Attempt {
    Retry(String),
    Fatal(GatewayError),
}

impl HttpBackend {
    pub fn new(
        config: HttpBackendConfig,
        frames: Option<Arc<FrameStore>>,
    ) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Network {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            id: format!("http:{}", config.model),
            config,
            client,
            frames,
        })
    }

    fn body(&self, request: &ChatRequest) -> Result<Value, GatewayError> {
        let mut content = vec![json!({"type": "text", "text": request.user_text})];
        if !request.image_refs.is_empty() {
            let frames = self.frames.as_ref().ok_or_else(|| {
                GatewayError::Attachment("no frame store attached to backend".into())
            })?;
            for frame in &request.image_refs {
                let bytes = frames
                    .jpeg_bytes(frame)
                    .map_err(|e| GatewayError::Attachment(e.to_string()))?;
                let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
                content.push(json!({
                    "type": "image_url",
                    "image_url": {"url": format!("data:image/jpeg;base64,{b64}")}
                }));
            }
        }
        let mut messages = Vec::new();
        if !request.system_text.is_empty() {
            messages.push(json!({"role": "system", "content": request.system_text}));
        }
        messages.push(json!({"role": "user", "content": content}));
        Ok(json!({
            "model": self.config.model,
            "temperature": request.temperature,
            "stream": false,
            "messages": messages,
        }))
    }

    fn attempt(&self, body: &Value) -> Result<String, Attempt> {
        let mut req = self.client.post(&self.config.endpoint).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retry(format!("status {status}: {text}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(GatewayError::BackendRefused {
                status: status.as_u16(),
                body: text,
            }));
        }
        let parsed: Value =
            serde_json::from_str(&text).map_err(|e| Attempt::Retry(format!("bad body: {e}")))?;
        Ok(message_text(&parsed).unwrap_or_default())
    }
}

/// `choices[0].message.content`, either a string or a list of text parts.
fn message_text(body: &Value) -> Option<String> {
    let content = body.pointer("/choices/0/message/content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}

impl ModelBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<ModelReply, GatewayError> {
        let body = self.body(request)?;
        let started = Instant::now();
        let mut last_error = String::new();
        let attempts = self.config.network_retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self
                    .config
                    .backoff_ms
                    .saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(&body) {
                Ok(raw_text) if raw_text.trim().is_empty() => return Err(GatewayError::EmptyReply),
                Ok(raw_text) => {
                    return Ok(ModelReply {
                        raw_text,
                        backend_id: self.id.clone(),
                        latency_ms: started.elapsed().as_millis() as u64,
                    })
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(message)) => {
                    tracing::warn!(attempt, %message, "model request failed");
                    last_error = message;
                }
            }
        }
        Err(GatewayError::Network {
            attempts,
            message: last_error,
        })
    }
}

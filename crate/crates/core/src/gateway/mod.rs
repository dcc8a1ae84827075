//! Uniform access to vision-language and multimodal language model backends.
//!
//! Two backends ship with the engine: [`HttpBackend`] speaks the
//! chat-completions JSON protocol, and [`ScriptedBackend`] answers from an
//! ordered rule list so the whole pipeline can run offline and reproducibly.
//! [`Gateway`] wraps either one with the structured-output retry policy.

mod http;
mod scripted;
mod structured;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::FrameRef;

pub use http::{HttpBackend, HttpBackendConfig};
pub use scripted::{Matcher, ScriptRule, ScriptedBackend};
pub use structured::{extract_structured, SchemaName, StructuredValue};

/// Number of extra completions attempted when a reply fails to parse or validate.
pub const DEFAULT_SCHEMA_RETRIES: u32 = 2;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("network failure after {attempts} attempts: {message}")]
    Network { attempts: u32, message: String },
    #[error("backend refused the request with status {status}: {body}")]
    BackendRefused { status: u16, body: String },
    #[error("backend returned an empty reply")]
    EmptyReply,
    #[error("no balanced JSON object in model output")]
    Parse,
    #[error("schema `{schema}` violated: {message}")]
    Schema { schema: SchemaName, message: String },
    #[error("attachment error: {0}")]
    Attachment(String),
    #[error("invalid script: {0}")]
    Script(String),
}

impl GatewayError {
    fn schema(schema: SchemaName, message: impl Into<String>) -> Self {
        Self::Schema {
            schema,
            message: message.into(),
        }
    }

    /// Errors that a fresh completion may cure.
    pub fn is_output_error(&self) -> bool {
        matches!(self, Self::Parse | Self::Schema { .. })
    }
}

/// Which pipeline stage issued a model call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Perception,
    Knowledge,
    Planning,
    Reasoning,
    Reflection,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::Perception,
        Role::Knowledge,
        Role::Planning,
        Role::Reasoning,
        Role::Reflection,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Perception => "perception",
            Role::Knowledge => "knowledge",
            Role::Planning => "planning",
            Role::Reasoning => "reasoning",
            Role::Reflection => "reflection",
        }
    }

    /// Only the vision stages attach frames.
    pub fn takes_images(self) -> bool {
        matches!(self, Role::Perception | Role::Reasoning)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| GatewayError::Script(format!("unknown role `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role: Role,
    pub system_text: String,
    pub user_text: String,
    pub image_refs: Vec<FrameRef>,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(role: Role, system_text: impl Into<String>, user_text: impl Into<String>) -> Self {
        Self {
            role,
            system_text: system_text.into(),
            user_text: user_text.into(),
            image_refs: Vec::new(),
            temperature: 0.0,
        }
    }

    /// Attaches frames. Non-vision roles never carry images, so they are
    /// silently ignored there.
    pub fn with_images(mut self, refs: impl IntoIterator<Item = FrameRef>) -> Self {
        if self.role.takes_images() {
            self.image_refs.extend(refs);
        }
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature.max(0.0);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReply {
    pub raw_text: String,
    pub backend_id: String,
    pub latency_ms: u64,
}

pub trait ModelBackend: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, request: &ChatRequest) -> Result<ModelReply, GatewayError>;
}

/// A backend plus the structured-output retry policy.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ModelBackend>,
    schema_retries: u32,
    temperature: f64,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.id())
            .field("schema_retries", &self.schema_retries)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn ModelBackend>) -> Self {
        Self {
            backend,
            schema_retries: DEFAULT_SCHEMA_RETRIES,
            temperature: 0.0,
        }
    }

    pub fn with_schema_retries(mut self, retries: u32) -> Self {
        self.schema_retries = retries;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature.max(0.0);
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn request(
        &self,
        role: Role,
        system: impl Into<String>,
        user: impl Into<String>,
    ) -> ChatRequest {
        ChatRequest::new(role, system, user).with_temperature(self.temperature)
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ModelReply, GatewayError> {
        let reply = self.backend.complete(request)?;
        if reply.raw_text.trim().is_empty() {
            return Err(GatewayError::EmptyReply);
        }
        Ok(reply)
    }

    /// Completes and extracts `schema`, re-issuing the request up to
    /// `schema_retries` more times while the output fails to parse or validate.
    pub fn complete_structured(
        &self,
        request: &ChatRequest,
        schema: SchemaName,
    ) -> Result<StructuredValue, GatewayError> {
        let mut attempt = 0;
        loop {
            let reply = self.complete(request)?;
            match extract_structured(&reply, schema) {
                Ok(value) => return Ok(value),
                Err(e) if e.is_output_error() && attempt < self.schema_retries => {
                    tracing::debug!(%schema, attempt, error = %e, "retrying structured completion");
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

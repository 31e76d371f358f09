//! Clients for the remote model roles (chat, embedding, reranking, modality
//! classification) and a scripted mock server that stands in for all of them.

mod client;
mod config;
mod local;
pub mod mock;
pub mod wire;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::comprehension::Modality;

pub use client::GatewayClient;
pub use config::{EndpointConfig, EndpointRole, GatewayProfile};
pub use local::{HashEmbedder, LexicalReranker};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid gateway configuration: {0}")]
    Config(String),
    #[error("{role} endpoint unreachable: {message}")]
    Transport { role: EndpointRole, message: String },
    #[error("{role} endpoint timed out after {after:?}")]
    Timeout { role: EndpointRole, after: Duration },
    #[error("{role} endpoint returned HTTP {status}: {body}")]
    Status { role: EndpointRole, status: u16, body: String },
    #[error("{role} endpoint failed after {attempts} attempts: {last}")]
    RetriesExhausted { role: EndpointRole, attempts: u32, last: Box<GatewayError> },
    #[error("{role} endpoint returned a non-conforming body: {message}")]
    Malformed { role: EndpointRole, message: String },
    #[error("embedding dimension mismatch at input {index}: expected {expected}, found {found}")]
    Dimension { index: usize, expected: usize, found: usize },
    #[error("classifier distribution sums to {sum}, expected 1")]
    Distribution { sum: f64 },
}

impl GatewayError {
    pub fn is_timeout(&self) -> bool {
        match self {
            GatewayError::Timeout { .. } => true,
            GatewayError::RetriesExhausted { last, .. } => last.is_timeout(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageAttachment {
    pub media_type: String,
    pub data: Arc<[u8]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    pub images: Vec<ImageAttachment>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into(), images: Vec::new() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into(), images: Vec::new() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into(), images: Vec::new() }
    }

    pub fn with_images(mut self, images: Vec<ImageAttachment>) -> Self {
        self.images = images;
        self
    }
}

/// A function the chat model may call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

/// A tool-call directive exactly as the model emitted it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallDirective {
    pub id: String,
    pub name: String,
    pub arguments: String,
}

impl ToolCallDirective {
    pub fn parsed_arguments(&self) -> Result<Value, serde_json::Error> {
        if self.arguments.trim().is_empty() {
            return Ok(Value::Object(Default::default()));
        }
        serde_json::from_str(&self.arguments)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: Option<String>,
    pub tool_calls: Vec<ToolCallDirective>,
    /// Transient failures retried before this completion arrived.
    pub retries: u32,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: Some(text.into()), ..Self::default() }
    }
}

#[async_trait]
pub trait ChatModel: Send + Sync {
    async fn chat(&self, messages: &[ChatMessage], tools: &[ToolSpec]) -> Result<Completion, GatewayError>;
}

#[async_trait]
pub trait Embedder: Send + Sync {
    fn model_id(&self) -> &str;

    /// One vector per input, all of the same dimension. Vectors are not normalized.
    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError>;
}

#[async_trait]
pub trait Reranker: Send + Sync {
    /// Relevance of each document to the query, aligned with `docs`.
    async fn rerank_score(&self, query: &str, docs: &[String]) -> Result<Vec<f64>, GatewayError>;
}

#[async_trait]
pub trait ModalityClassifier: Send + Sync {
    /// Probability for each of the six imaging modalities; sums to 1.
    async fn classify_image(&self, image: &[u8], media_type: &str) -> Result<BTreeMap<Modality, f64>, GatewayError>;
}

/// Checks that a classifier distribution covers only concrete modalities and sums to one.
pub fn validate_distribution(dist: &BTreeMap<Modality, f64>) -> Result<(), GatewayError> {
    let sum: f64 = dist.values().sum();
    if dist.values().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-6 {
        return Err(GatewayError::Distribution { sum });
    }
    Ok(())
}

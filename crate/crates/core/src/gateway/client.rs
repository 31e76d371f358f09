use std::collections::BTreeMap;

use async_trait::async_trait;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{
    ChatRequest, ChatResponse, ClassifyRequest, ClassifyResponse, EmbeddingRequest, EmbeddingResponse, ImageUrl,
    RerankRequest, RerankResponse, WireContent, WireFunction, WireMessage, WirePart, WireTool,
};
use super::{
    validate_distribution, ChatMessage, ChatModel, Completion, Embedder, EndpointConfig, EndpointRole, GatewayError,
    ModalityClassifier, Reranker, ToolCallDirective, ToolSpec,
};
use crate::comprehension::Modality;

/// HTTP client for one configured endpoint. Cheap to clone and safe to share.
#[derive(Debug, Clone)]
pub struct GatewayClient {
    http: reqwest::Client,
    config: EndpointConfig,
}

enum Attempt<T> {
    Done(T),
    Retry(GatewayError),
}

fn retryable_status(status: u16) -> bool {
    matches!(status, 408 | 429 | 500 | 502 | 503 | 504)
}

impl GatewayClient {
    pub fn new(config: EndpointConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let http = reqwest::Client::builder().build().map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self { http, config })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn role(&self) -> EndpointRole {
        self.config.role
    }

    async fn attempt<Req: Serialize + Sync, Resp: DeserializeOwned>(
        &self,
        body: &Req,
    ) -> Result<Attempt<Resp>, GatewayError> {
        let role = self.role();
        let mut request = self.http.post(self.config.url()).json(body);
        if let Some(var) = &self.config.api_key_env {
            if let Ok(key) = std::env::var(var) {
                request = request.bearer_auth(key);
            }
        }
        let exchange = async {
            let response = request.send().await?;
            let status = response.status().as_u16();
            let text = response.text().await?;
            Ok::<_, reqwest::Error>((status, text))
        };
        let timeout = self.config.timeout();
        let (status, text) = match tokio::time::timeout(timeout, exchange).await {
            Err(_) => return Err(GatewayError::Timeout { role, after: timeout }),
            Ok(Err(e)) if e.is_timeout() => return Err(GatewayError::Timeout { role, after: timeout }),
            Ok(Err(e)) => {
                return Ok(Attempt::Retry(GatewayError::Transport { role, message: e.to_string() }));
            }
            Ok(Ok(pair)) => pair,
        };
        if !(200..300).contains(&status) {
            let err = GatewayError::Status { role, status, body: text };
            return if retryable_status(status) { Ok(Attempt::Retry(err)) } else { Err(err) };
        }
        serde_json::from_str(&text)
            .map(Attempt::Done)
            .map_err(|e| GatewayError::Malformed { role, message: e.to_string() })
    }

    /// POSTs `body`, retrying transient failures with exponential backoff.
    /// Returns the decoded body and the number of retries spent.
    pub async fn post<Req: Serialize + Sync, Resp: DeserializeOwned>(
        &self,
        body: &Req,
    ) -> Result<(Resp, u32), GatewayError> {
        let mut retries = 0u32;
        loop {
            match self.attempt(body).await? {
                Attempt::Done(resp) => return Ok((resp, retries)),
                Attempt::Retry(err) => {
                    if retries >= self.config.max_retries {
                        return Err(if retries == 0 {
                            err
                        } else {
                            GatewayError::RetriesExhausted {
                                role: self.role(),
                                attempts: retries + 1,
                                last: Box::new(err),
                            }
                        });
                    }
                    retries += 1;
                    let delay = self.config.backoff(retries);
                    tracing::debug!(role = %self.role(), retries, ?delay, "retrying after {err}");
                    tokio::time::sleep(delay).await;
                }
            }
        }
    }

    pub fn chat_request(&self, messages: &[ChatMessage], tools: &[ToolSpec]) -> ChatRequest {
        build_chat_request(&self.config.model, messages, tools)
    }
}

pub(crate) fn build_chat_request(model: &str, messages: &[ChatMessage], tools: &[ToolSpec]) -> ChatRequest {
    let engine = base64::engine::general_purpose::STANDARD;
    let messages = messages
        .iter()
        .map(|m| {
            let content = if m.images.is_empty() {
                WireContent::Text(m.content.clone())
            } else {
                let mut parts = vec![WirePart::Text { text: m.content.clone() }];
                parts.extend(m.images.iter().map(|img| WirePart::ImageUrl {
                    image_url: ImageUrl { url: format!("data:{};base64,{}", img.media_type, engine.encode(&img.data)) },
                }));
                WireContent::Parts(parts)
            };
            WireMessage { role: m.role.as_str().to_string(), content }
        })
        .collect();
    let tools: Vec<WireTool> = tools
        .iter()
        .map(|t| WireTool {
            kind: "function".to_string(),
            function: WireFunction {
                name: t.name.clone(),
                description: t.description.clone(),
                parameters: t.parameters.clone(),
            },
        })
        .collect();
    let tool_choice = (!tools.is_empty()).then(|| "auto".to_string());
    ChatRequest { model: model.to_string(), messages, tools, tool_choice }
}

#[async_trait]
impl ChatModel for GatewayClient {
    async fn chat(&self, messages: &[ChatMessage], tools: &[ToolSpec]) -> Result<Completion, GatewayError> {
        let request = self.chat_request(messages, tools);
        let (response, retries): (ChatResponse, u32) = self.post(&request).await?;
        let choice = response.choices.into_iter().next().ok_or_else(|| GatewayError::Malformed {
            role: EndpointRole::Chat,
            message: "response has no choices".into(),
        })?;
        let tool_calls = choice
            .message
            .tool_calls
            .into_iter()
            .map(|c| ToolCallDirective { id: c.id, name: c.function.name, arguments: c.function.arguments })
            .collect();
        Ok(Completion { text: choice.message.content, tool_calls, retries })
    }
}

#[async_trait]
impl Embedder for GatewayClient {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let request = EmbeddingRequest { model: self.config.model.clone(), input: texts.to_vec() };
        let (mut response, _): (EmbeddingResponse, u32) = self.post(&request).await?;
        if response.data.len() != texts.len() {
            return Err(GatewayError::Malformed {
                role: EndpointRole::Embed,
                message: format!("{} embeddings for {} inputs", response.data.len(), texts.len()),
            });
        }
        response.data.sort_by_key(|d| d.index);
        if response.data.iter().enumerate().any(|(i, d)| d.index != i) {
            return Err(GatewayError::Malformed {
                role: EndpointRole::Embed,
                message: "embedding indices are not a permutation of the inputs".into(),
            });
        }
        let vectors: Vec<Vec<f32>> = response.data.into_iter().map(|d| d.embedding).collect();
        check_uniform_dimension(&vectors)?;
        Ok(vectors)
    }
}

pub(crate) fn check_uniform_dimension(vectors: &[Vec<f32>]) -> Result<(), GatewayError> {
    let Some(first) = vectors.first() else { return Ok(()) };
    let expected = first.len();
    for (index, v) in vectors.iter().enumerate() {
        if v.len() != expected || v.is_empty() {
            return Err(GatewayError::Dimension { index, expected, found: v.len() });
        }
    }
    Ok(())
}

#[async_trait]
impl Reranker for GatewayClient {
    async fn rerank_score(&self, query: &str, docs: &[String]) -> Result<Vec<f64>, GatewayError> {
        if docs.is_empty() {
            return Ok(Vec::new());
        }
        let request =
            RerankRequest { model: self.config.model.clone(), query: query.to_string(), documents: docs.to_vec() };
        let (response, _): (RerankResponse, u32) = self.post(&request).await?;
        let mut scores = vec![None; docs.len()];
        for datum in response.results {
            match scores.get_mut(datum.index) {
                Some(slot @ None) => *slot = Some(datum.relevance_score),
                _ => {
                    return Err(GatewayError::Malformed {
                        role: EndpointRole::Rerank,
                        message: format!("unexpected or repeated result index {}", datum.index),
                    })
                }
            }
        }
        scores
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                s.ok_or_else(|| GatewayError::Malformed {
                    role: EndpointRole::Rerank,
                    message: format!("no score for document {i}"),
                })
            })
            .collect()
    }
}

#[async_trait]
impl ModalityClassifier for GatewayClient {
    async fn classify_image(&self, image: &[u8], media_type: &str) -> Result<BTreeMap<Modality, f64>, GatewayError> {
        let request = ClassifyRequest {
            model: self.config.model.clone(),
            image: base64::engine::general_purpose::STANDARD.encode(image),
            media_type: media_type.to_string(),
        };
        let (response, _): (ClassifyResponse, u32) = self.post(&request).await?;
        let mut dist = BTreeMap::new();
        for (label, p) in response.distribution {
            let modality = Modality::from_label(&label).filter(|m| *m != Modality::Unknown).ok_or_else(|| {
                GatewayError::Malformed {
                    role: EndpointRole::Classify,
                    message: format!("unknown modality label {label:?}"),
                }
            })?;
            dist.insert(modality, p);
        }
        validate_distribution(&dist)?;
        Ok(dist)
    }
}

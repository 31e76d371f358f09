//! Scripted stand-in for every model route.
//!
//! A [`MockScript`] is an ordered list of entries; each request is matched
//! against the entries in order and the first hit's canned response is
//! returned, after its optional delay. Requests nothing matches get HTTP 418
//! with the request fingerprint so a test fails loudly instead of drifting.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::local::{HashEmbedder, LexicalReranker};
use super::wire::{canonical_json, text_leaves};
use super::EndpointRole;
use crate::comprehension::Modality;

#[derive(Debug, thiserror::Error)]
pub enum MockError {
    #[error("cannot bind mock server on port {port}: {source}")]
    Bind { port: u16, source: std::io::Error },
    #[error("ambiguous script: entries {first} and {second} have identical matchers")]
    Ambiguous { first: usize, second: usize },
}

/// Which requests an entry answers. Every populated field must hold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matcher {
    pub role: EndpointRole,
    /// 1-based position of the request among requests to the same role.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordinal: Option<u64>,
    /// Hex SHA-256 of the canonical (key-sorted) request body.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_sha256: Option<String>,
    /// Substrings that must all occur in the request's text content.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    /// Substrings that must not occur in the request's text content.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub absent: Vec<String>,
}

impl Matcher {
    pub fn any(role: EndpointRole) -> Self {
        Self { role, ordinal: None, body_sha256: None, contains: Vec::new(), absent: Vec::new() }
    }

    pub fn nth(role: EndpointRole, ordinal: u64) -> Self {
        Self { ordinal: Some(ordinal), ..Self::any(role) }
    }

    pub fn body(role: EndpointRole, body: &Value) -> Self {
        Self { body_sha256: Some(body_hash(body)), ..Self::any(role) }
    }

    pub fn contains(mut self, needle: impl Into<String>) -> Self {
        self.contains.push(needle.into());
        self
    }

    pub fn absent(mut self, needle: impl Into<String>) -> Self {
        self.absent.push(needle.into());
        self
    }

    fn matches(&self, fp: &Fingerprint, text: &str) -> bool {
        self.role == fp.role
            && self.ordinal.is_none_or(|n| n == fp.ordinal)
            && self.body_sha256.as_ref().is_none_or(|h| *h == fp.body_sha256)
            && self.contains.iter().all(|n| text.contains(n.as_str()))
            && !self.absent.iter().any(|n| text.contains(n.as_str()))
    }
}

fn default_status() -> u16 {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockResponse {
    #[serde(default = "default_status")]
    pub status: u16,
    pub body: Value,
}

impl MockResponse {
    pub fn json(body: Value) -> Self {
        Self { status: 200, body }
    }

    pub fn status(status: u16) -> Self {
        Self { status, body: json!({"error": {"message": format!("scripted status {status}")}}) }
    }

    pub fn chat_text(text: &str) -> Self {
        Self::json(json!({
            "choices": [{"message": {"role": "assistant", "content": text}, "finish_reason": "stop"}]
        }))
    }

    /// Assistant message carrying tool-call directives, ids `call_1`, `call_2`, ...
    pub fn chat_tool_calls(calls: &[(&str, Value)]) -> Self {
        let calls: Vec<Value> = calls
            .iter()
            .enumerate()
            .map(|(i, (name, args))| {
                json!({
                    "id": format!("call_{}", i + 1),
                    "type": "function",
                    "function": {"name": name, "arguments": args.to_string()}
                })
            })
            .collect();
        Self::json(json!({
            "choices": [{
                "message": {"role": "assistant", "content": null, "tool_calls": calls},
                "finish_reason": "tool_calls"
            }]
        }))
    }

    pub fn embeddings(vectors: Vec<Vec<f32>>) -> Self {
        let data: Vec<Value> = vectors
            .into_iter()
            .enumerate()
            .map(|(index, embedding)| json!({"object": "embedding", "index": index, "embedding": embedding}))
            .collect();
        Self::json(json!({"object": "list", "data": data}))
    }

    pub fn rerank(scores: &[f64]) -> Self {
        let results: Vec<Value> =
            scores.iter().enumerate().map(|(index, s)| json!({"index": index, "relevance_score": s})).collect();
        Self::json(json!({"results": results}))
    }

    pub fn classify(distribution: &[(Modality, f64)]) -> Self {
        let dist: serde_json::Map<String, Value> =
            distribution.iter().map(|(m, p)| (m.as_str().to_string(), json!(p))).collect();
        Self::json(json!({"distribution": dist}))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockEntry {
    pub matcher: Matcher,
    pub response: MockResponse,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ms: Option<u64>,
}

impl MockEntry {
    pub fn delayed(mut self, delay: Duration) -> Self {
        self.delay_ms = Some(delay.as_millis() as u64);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub entries: Vec<MockEntry>,
    /// When set, unmatched embedding requests are answered by a [`HashEmbedder`]
    /// of this dimension.
    #[serde(default)]
    pub embed_dimension: Option<usize>,
    /// When set, unmatched rerank requests are answered with [`LexicalReranker`] scores.
    #[serde(default)]
    pub lexical_rerank: bool,
}

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on(mut self, matcher: Matcher, response: MockResponse) -> Self {
        self.entries.push(MockEntry { matcher, response, delay_ms: None });
        self
    }

    pub fn on_delayed(mut self, matcher: Matcher, response: MockResponse, delay: Duration) -> Self {
        self.entries.push(MockEntry { matcher, response, delay_ms: None }.delayed(delay));
        self
    }

    pub fn with_hash_embeddings(mut self, dimension: usize) -> Self {
        self.embed_dimension = Some(dimension);
        self
    }

    pub fn with_lexical_rerank(mut self) -> Self {
        self.lexical_rerank = true;
        self
    }

    pub fn validate(&self) -> Result<(), MockError> {
        for (i, a) in self.entries.iter().enumerate() {
            if let Some(j) = self.entries[i + 1..].iter().position(|b| b.matcher == a.matcher) {
                return Err(MockError::Ambiguous { first: i, second: i + 1 + j });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub role: EndpointRole,
    pub ordinal: u64,
    pub body_sha256: String,
}

#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub fingerprint: Fingerprint,
    pub body: Value,
    /// Index of the script entry that answered, if any.
    pub matched: Option<usize>,
}

pub fn body_hash(body: &Value) -> String {
    hex::encode(Sha256::digest(canonical_json(body).as_bytes()))
}

struct MockState {
    script: MockScript,
    embedder: Option<HashEmbedder>,
    counters: Mutex<BTreeMap<EndpointRole, u64>>,
    log: Mutex<Vec<RecordedRequest>>,
}

/// Running mock server; stops when dropped.
pub struct MockServer {
    addr: SocketAddr,
    state: Arc<MockState>,
    task: tokio::task::JoinHandle<()>,
}

impl MockServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.state.log.lock().expect("mock log poisoned").clone()
    }

    pub fn request_count(&self, role: EndpointRole) -> usize {
        self.requests().iter().filter(|r| r.fingerprint.role == role).count()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Serves the script on `127.0.0.1:port` (0 picks a free port).
pub async fn serve_scripted(script: MockScript, port: u16) -> Result<MockServer, MockError> {
    script.validate()?;
    let listener =
        tokio::net::TcpListener::bind(("127.0.0.1", port)).await.map_err(|source| MockError::Bind { port, source })?;
    let addr = listener.local_addr().map_err(|source| MockError::Bind { port, source })?;
    let state = Arc::new(MockState {
        embedder: script.embed_dimension.map(HashEmbedder::new),
        script,
        counters: Mutex::new(BTreeMap::new()),
        log: Mutex::new(Vec::new()),
    });
    let app = router(state.clone());
    let task = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::warn!("mock server stopped: {e}");
        }
    });
    Ok(MockServer { addr, state, task })
}

fn router(state: Arc<MockState>) -> Router {
    let route = |role: EndpointRole| {
        post(move |State(state): State<Arc<MockState>>, body: Bytes| async move { answer(state, role, body).await })
    };
    Router::new()
        .route(EndpointRole::Chat.path(), route(EndpointRole::Chat))
        .route(EndpointRole::Embed.path(), route(EndpointRole::Embed))
        .route(EndpointRole::Rerank.path(), route(EndpointRole::Rerank))
        .route(EndpointRole::Classify.path(), route(EndpointRole::Classify))
        .with_state(state)
}

async fn answer(state: Arc<MockState>, role: EndpointRole, body: Bytes) -> Response {
    let Ok(body) = serde_json::from_slice::<Value>(&body) else {
        return (StatusCode::BAD_REQUEST, Json(json!({"error": "request body is not JSON"}))).into_response();
    };
    let ordinal = {
        let mut counters = state.counters.lock().expect("mock counters poisoned");
        let n = counters.entry(role).or_insert(0);
        *n += 1;
        *n
    };
    let fingerprint = Fingerprint { role, ordinal, body_sha256: body_hash(&body) };
    let text = text_leaves(&body);
    let matched = state.script.entries.iter().position(|e| e.matcher.matches(&fingerprint, &text));
    state.log.lock().expect("mock log poisoned").push(RecordedRequest {
        fingerprint: fingerprint.clone(),
        body: body.clone(),
        matched,
    });

    if let Some(index) = matched {
        let entry = &state.script.entries[index];
        if let Some(ms) = entry.delay_ms {
            tokio::time::sleep(Duration::from_millis(ms)).await;
        }
        let status = StatusCode::from_u16(entry.response.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        return (status, Json(entry.response.body.clone())).into_response();
    }

    match role {
        EndpointRole::Embed if state.embedder.is_some() => {
            let embedder = state.embedder.as_ref().expect("checked");
            let inputs = string_list(&body["input"]);
            let vectors = inputs.iter().map(|t| embedder.embed_one(t)).collect();
            (StatusCode::OK, Json(MockResponse::embeddings(vectors).body)).into_response()
        }
        EndpointRole::Rerank if state.script.lexical_rerank => {
            let query = body["query"].as_str().unwrap_or_default();
            let scores: Vec<f64> =
                string_list(&body["documents"]).iter().map(|d| LexicalReranker::score(query, d)).collect();
            (StatusCode::OK, Json(MockResponse::rerank(&scores).body)).into_response()
        }
        _ => (
            StatusCode::IM_A_TEAPOT,
            Json(json!({"error": "no scripted response matches", "fingerprint": fingerprint})),
        )
            .into_response(),
    }
}

fn string_list(value: &Value) -> Vec<String> {
    match value {
        Value::Array(items) => items.iter().map(|v| v.as_str().unwrap_or_default().to_string()).collect(),
        Value::String(s) => vec![s.clone()],
        _ => Vec::new(),
    }
}

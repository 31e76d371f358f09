//! HTTP facade: session lifecycle, message posting with image upload, event
//! streaming over server-sent events, knowledge search and tool listing.

mod stream;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agent::{AgentRuntime, FinalResponse, SessionConfig, TraceLog};
use crate::artifacts::ArtifactStore;
use crate::clock::IdGenerator;
use crate::comprehension::{sniff_media_type, Comprehender, ComprehensionError, Modality, ModalityLabel, RawImage};
use crate::rag::KnowledgeBase;
use crate::registry::{ExecutionContext, ToolFilter, ToolTask};
use crate::text::Language;

pub const DEFAULT_MAX_IMAGE_BYTES: usize = 20 * 1024 * 1024;
const MAX_IMAGES_PER_MESSAGE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Idle,
    Running,
    AwaitingUser,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHandle {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub config: SessionConfig,
    pub status: SessionStatus,
    pub last_seq: u64,
    pub last_response: Option<FinalResponse>,
}

struct Session {
    id: String,
    created_at: DateTime<Utc>,
    config: SessionConfig,
    status: Mutex<SessionStatus>,
    trace: Arc<TraceLog>,
    artifacts: Arc<ArtifactStore>,
    images: Mutex<BTreeMap<String, String>>,
    last_response: Mutex<Option<FinalResponse>>,
}

impl Session {
    fn handle(&self) -> SessionHandle {
        SessionHandle {
            session_id: self.id.clone(),
            created_at: self.created_at,
            config: self.config.clone(),
            status: *self.status.lock().expect("session lock poisoned"),
            last_seq: self.trace.last_seq(),
            last_response: self.last_response.lock().expect("session lock poisoned").clone(),
        }
    }

    /// Moves idle or awaiting sessions to running; at most one caller wins.
    fn try_start(&self) -> Result<SessionStatus, SessionStatus> {
        let mut status = self.status.lock().expect("session lock poisoned");
        match *status {
            SessionStatus::Idle | SessionStatus::AwaitingUser => {
                let previous = *status;
                *status = SessionStatus::Running;
                Ok(previous)
            }
            other => Err(other),
        }
    }

    fn set_status(&self, next: SessionStatus) {
        *self.status.lock().expect("session lock poisoned") = next;
    }
}

/// Shared service state.
pub struct ApiState {
    pub runtime: AgentRuntime,
    pub comprehender: Arc<Comprehender>,
    pub defaults: SessionConfig,
    /// Required on every route except `/healthz` when set.
    pub auth_token: Option<String>,
    pub max_image_bytes: usize,
    pub session_ids: IdGenerator,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl ApiState {
    pub fn new(runtime: AgentRuntime, comprehender: Arc<Comprehender>, defaults: SessionConfig) -> Self {
        Self {
            runtime,
            comprehender,
            defaults,
            auth_token: None,
            max_image_bytes: DEFAULT_MAX_IMAGE_BYTES,
            session_ids: IdGenerator::Random,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn with_auth_token(mut self, token: Option<String>) -> Self {
        self.auth_token = token;
        self
    }

    pub fn with_max_image_bytes(mut self, bytes: usize) -> Self {
        self.max_image_bytes = bytes;
        self
    }

    pub fn with_session_ids(mut self, ids: IdGenerator) -> Self {
        self.session_ids = ids;
        self
    }

    fn knowledge(&self) -> Option<&Arc<KnowledgeBase>> {
        self.runtime.knowledge.as_ref()
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no session {id}")))
    }

    /// The full event trace of a session, for replay comparisons.
    pub fn trace(&self, session_id: &str) -> Option<Arc<TraceLog>> {
        self.session(session_id).ok().map(|s| s.trace.clone())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    TooLarge(String),
    #[error("{0}")]
    Unsupported(String),
    #[error("missing or wrong bearer token")]
    Unauthorized,
    #[error("{0}")]
    Unavailable(String),
    #[error("{0}")]
    Upstream(String),
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::TooLarge(_) => StatusCode::PAYLOAD_TOO_LARGE,
            ApiError::Unsupported(_) => StatusCode::UNSUPPORTED_MEDIA_TYPE,
            ApiError::Unauthorized => StatusCode::UNAUTHORIZED,
            ApiError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::Upstream(_) => StatusCode::BAD_GATEWAY,
        }
    }

    fn code(&self) -> &'static str {
        match self {
            ApiError::NotFound(_) => "not_found",
            ApiError::Invalid(_) => "invalid",
            ApiError::Conflict(_) => "conflict",
            ApiError::TooLarge(_) => "payload_too_large",
            ApiError::Unsupported(_) => "unsupported_media_type",
            ApiError::Unauthorized => "unauthorized",
            ApiError::Unavailable(_) => "unavailable",
            ApiError::Upstream(_) => "upstream",
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code(), "message": self.to_string()}});
        let mut resp = (self.status(), Json(body)).into_response();
        if matches!(self, ApiError::Unauthorized) {
            resp.headers_mut().insert(header::WWW_AUTHENTICATE, header::HeaderValue::from_static("Bearer"));
        }
        resp
    }
}

/// Refuses to expose an unauthenticated service beyond loopback.
pub fn check_bind_policy(addr: &SocketAddr, token: Option<&str>, allow_open: bool) -> Result<(), String> {
    if addr.ip().is_loopback() || token.is_some() || allow_open {
        Ok(())
    } else {
        Err(format!("refusing to serve {addr} without a bearer token; set one or bind to loopback"))
    }
}

async fn require_bearer(State(state): State<Arc<ApiState>>, req: Request, next: Next) -> Response {
    let Some(expected) = state.auth_token.as_deref() else {
        return next.run(req).await;
    };
    if req.uri().path() == "/healthz" {
        return next.run(req).await;
    }
    let presented =
        req.headers().get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()).and_then(|v| v.strip_prefix("Bearer "));
    if presented.is_some_and(|p| constant_time_eq(p.as_bytes(), expected.as_bytes())) {
        next.run(req).await
    } else {
        ApiError::Unauthorized.into_response()
    }
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

pub fn router(state: Arc<ApiState>) -> Router {
    // Room for the per-image cap on every allowed image plus the text fields.
    let body_limit = state.max_image_bytes.saturating_mul(MAX_IMAGES_PER_MESSAGE).saturating_add(1 << 20);
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(close_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/events", get(stream::stream_events))
        .route("/sessions/{id}/artifacts/{artifact_id}", get(get_artifact))
        .route("/tools", get(list_tools))
        .route("/knowledge/search", get(search_knowledge))
        .layer(DefaultBodyLimit::max(body_limit))
        .layer(middleware::from_fn_with_state(state.clone(), require_bearer))
        .with_state(state)
}

/// A running service. Dropping it stops the server.
pub struct ApiServer {
    addr: SocketAddr,
    task: tokio::task::JoinHandle<()>,
}

impl ApiServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Runs until the server stops.
    pub async fn wait(mut self) {
        let _ = (&mut self.task).await;
    }
}

impl Drop for ApiServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

pub async fn serve(state: Arc<ApiState>, addr: SocketAddr) -> std::io::Result<ApiServer> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let app = router(state);
    let task = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("api server stopped: {e}");
        }
    });
    Ok(ApiServer { addr, task })
}

async fn healthz(State(state): State<Arc<ApiState>>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "tools": state.runtime.registry.len(),
        "knowledge_chunks": state.knowledge().map_or(0, |kb| kb.total_chunks()),
    }))
}

/// Overrides are merged key by key over the service defaults.
fn merge_config(defaults: &SessionConfig, overrides: &Value) -> Result<SessionConfig, ApiError> {
    let mut merged = serde_json::to_value(defaults).expect("config serializes");
    match overrides {
        Value::Null => {}
        Value::Object(fields) => {
            let base = merged.as_object_mut().expect("config is an object");
            for (key, value) in fields {
                if !base.contains_key(key) {
                    return Err(ApiError::Invalid(format!("unknown config field {key}")));
                }
                base.insert(key.clone(), value.clone());
            }
        }
        _ => return Err(ApiError::Invalid("config overrides must be a JSON object".into())),
    }
    let config: SessionConfig = serde_json::from_value(merged).map_err(|e| ApiError::Invalid(e.to_string()))?;
    config.validate().map_err(ApiError::Invalid)?;
    Ok(config)
}

async fn create_session(
    State(state): State<Arc<ApiState>>,
    body: Option<Json<Value>>,
) -> Result<(StatusCode, Json<SessionHandle>), ApiError> {
    let overrides = body.map(|Json(v)| v).unwrap_or(Value::Null);
    let overrides = overrides.get("config").cloned().unwrap_or(overrides);
    let config = merge_config(&state.defaults, &overrides)?;
    let id = state.session_ids.next_id();
    let session = Arc::new(Session {
        id: id.clone(),
        created_at: state.runtime.clock.now(),
        config,
        status: Mutex::new(SessionStatus::Idle),
        trace: Arc::new(TraceLog::new()),
        artifacts: Arc::new(ArtifactStore::new()),
        images: Mutex::new(BTreeMap::new()),
        last_response: Mutex::new(None),
    });
    let handle = session.handle();
    let mut sessions = state.sessions.write().expect("session table poisoned");
    if sessions.contains_key(&id) {
        return Err(ApiError::Conflict(format!("session id {id} already exists")));
    }
    sessions.insert(id, session);
    Ok((StatusCode::CREATED, Json(handle)))
}

async fn get_session(
    State(state): State<Arc<ApiState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionHandle>, ApiError> {
    Ok(Json(state.session(&id)?.handle()))
}

async fn close_session(
    State(state): State<Arc<ApiState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionHandle>, ApiError> {
    let session = state.session(&id)?;
    {
        let mut status = session.status.lock().expect("session lock poisoned");
        if *status == SessionStatus::Running {
            return Err(ApiError::Conflict("session is running".into()));
        }
        *status = SessionStatus::Closed;
    }
    Ok(Json(session.handle()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcceptedImage {
    pub image_id: String,
    pub artifact_id: String,
    pub media_type: String,
    pub modality: ModalityLabel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Accepted {
    pub session_id: String,
    pub run_id: String,
    /// Stream events with `from_seq` set to this value to follow the run.
    pub from_seq: u64,
    pub images: Vec<AcceptedImage>,
    pub intents: Vec<String>,
    pub warnings: Vec<String>,
}

struct Upload {
    text: String,
    images: Vec<(Option<String>, Vec<u8>)>,
}

async fn read_upload(mut multipart: Multipart, max_image_bytes: usize) -> Result<Upload, ApiError> {
    let mut upload = Upload { text: String::new(), images: Vec::new() };
    loop {
        let field = match multipart.next_field().await {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => return Err(ApiError::TooLarge(e.body_text())),
            Err(e) => return Err(ApiError::Invalid(e.body_text())),
        };
        let name = field.name().unwrap_or_default().to_string();
        let file_name = field.file_name().map(str::to_string);
        let bytes = field.bytes().await.map_err(|e| {
            if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
                ApiError::TooLarge(e.body_text())
            } else {
                ApiError::Invalid(e.body_text())
            }
        })?;
        if name == "text" && file_name.is_none() {
            upload.text =
                String::from_utf8(bytes.to_vec()).map_err(|_| ApiError::Invalid("text is not UTF-8".into()))?;
        } else if matches!(name.as_str(), "image" | "images" | "image[]") || file_name.is_some() {
            if bytes.len() > max_image_bytes {
                return Err(ApiError::TooLarge(format!(
                    "image of {} bytes exceeds the {max_image_bytes}-byte limit",
                    bytes.len()
                )));
            }
            if upload.images.len() == MAX_IMAGES_PER_MESSAGE {
                return Err(ApiError::TooLarge(format!("at most {MAX_IMAGES_PER_MESSAGE} images per message")));
            }
            upload.images.push((file_name, bytes.to_vec()));
        } else {
            return Err(ApiError::Invalid(format!("unexpected form field {name:?}")));
        }
    }
    Ok(upload)
}

/// Prior user queries of the session, oldest first, for intent recognition.
fn history_for(state: &ApiState, session_id: &str) -> String {
    state
        .runtime
        .memory
        .snapshot(session_id)
        .user_turns
        .iter()
        .map(|t| format!("User: {}", t.query))
        .collect::<Vec<_>>()
        .join("\n")
}

async fn post_message(
    State(state): State<Arc<ApiState>>,
    Path(id): Path<String>,
    multipart: Multipart,
) -> Result<(StatusCode, Json<Accepted>), ApiError> {
    let session = state.session(&id)?;
    let previous = session.try_start().map_err(|status| match status {
        SessionStatus::Closed => ApiError::Conflict("session is closed".into()),
        _ => ApiError::Conflict("a run is already in progress for this session".into()),
    })?;
    match prepare_run(&state, &session, multipart).await {
        Ok(accepted) => Ok((StatusCode::ACCEPTED, Json(accepted))),
        Err(e) => {
            session.set_status(previous);
            Err(e)
        }
    }
}

async fn prepare_run(
    state: &Arc<ApiState>,
    session: &Arc<Session>,
    multipart: Multipart,
) -> Result<Accepted, ApiError> {
    let upload = read_upload(multipart, state.max_image_bytes).await?;
    if upload.text.trim().is_empty() && upload.images.is_empty() {
        return Err(ApiError::Invalid("message needs text or at least one image".into()));
    }
    let mut raw = Vec::with_capacity(upload.images.len());
    let mut new_images = Vec::new();
    {
        let known = session.images.lock().expect("session lock poisoned");
        for (n, (file_name, bytes)) in upload.images.into_iter().enumerate() {
            let media_type = sniff_media_type(&bytes).ok_or_else(|| {
                ApiError::Unsupported(format!(
                    "{} is not a PNG or JPEG image",
                    file_name.as_deref().unwrap_or("upload")
                ))
            })?;
            let image_id = format!("img-{}", known.len() + n + 1);
            let artifact_ref = session.artifacts.put(&bytes, media_type);
            new_images.push((image_id.clone(), artifact_ref.clone()));
            raw.push(RawImage { image_id, bytes: Arc::from(bytes), artifact_ref });
        }
    }
    let history = history_for(state, &session.id);
    let comprehension =
        state.comprehender.comprehend(&upload.text, raw, &history, state.runtime.clock.as_ref()).await.map_err(
            |e| match e {
                ComprehensionError::UndecodableImage { .. } => ApiError::Unsupported(e.to_string()),
                other => ApiError::Invalid(other.to_string()),
            },
        )?;
    let instruction = comprehension.instruction;

    let ctx = {
        let mut known = session.images.lock().expect("session lock poisoned");
        known.extend(new_images);
        ExecutionContext { artifacts: session.artifacts.clone(), images: known.clone() }
    };
    let accepted = Accepted {
        session_id: session.id.clone(),
        run_id: state.runtime.ids.next_id(),
        from_seq: session.trace.last_seq(),
        images: instruction
            .images
            .iter()
            .map(|i| AcceptedImage {
                image_id: i.image_id.clone(),
                artifact_id: i.artifact_ref.clone(),
                media_type: i.media_type.clone(),
                modality: i.modality,
            })
            .collect(),
        intents: instruction.intents.iter().map(|i| i.as_str().to_string()).collect(),
        warnings: comprehension.warnings,
    };

    let runtime = state.runtime.clone();
    let session = session.clone();
    tokio::spawn(async move {
        let config = session.config.clone();
        let outcome = runtime.run_session(&session.id, instruction, &config, &ctx, &session.trace).await;
        let next = match outcome {
            Ok(response) => {
                let next = if response.awaiting_user { SessionStatus::AwaitingUser } else { SessionStatus::Idle };
                *session.last_response.lock().expect("session lock poisoned") = Some(response);
                next
            }
            Err(e) => {
                tracing::warn!(session = %session.id, "run failed: {e}");
                SessionStatus::Idle
            }
        };
        session.set_status(next);
    });
    Ok(accepted)
}

async fn get_artifact(
    State(state): State<Arc<ApiState>>,
    Path((id, artifact_id)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let artifact =
        session.artifacts.get(&artifact_id).ok_or_else(|| ApiError::NotFound(format!("no artifact {artifact_id}")))?;
    let mut headers = HeaderMap::new();
    headers.insert(
        header::CONTENT_TYPE,
        artifact.media_type.parse().unwrap_or(header::HeaderValue::from_static("application/octet-stream")),
    );
    Ok((headers, artifact.bytes.to_vec()).into_response())
}

#[derive(Debug, Deserialize)]
struct ToolQuery {
    modality: Option<String>,
    task: Option<String>,
}

async fn list_tools(State(state): State<Arc<ApiState>>, Query(q): Query<ToolQuery>) -> Result<Json<Value>, ApiError> {
    let mut filter = ToolFilter::default();
    if let Some(m) = q.modality.as_deref().filter(|m| !m.is_empty()) {
        let modalities: Result<BTreeSet<Modality>, ApiError> = m
            .split(',')
            .map(|s| Modality::from_label(s.trim()).ok_or_else(|| ApiError::Invalid(format!("unknown modality {s}"))))
            .collect();
        filter.modalities = Some(modalities?);
    }
    if let Some(t) = q.task.as_deref().filter(|t| !t.is_empty()) {
        let task: ToolTask = serde_json::from_value(Value::String(t.to_string()))
            .map_err(|_| ApiError::Invalid(format!("unknown task {t}")))?;
        filter.task = Some(task);
    }
    let tools = state.runtime.registry.list_tools(&filter);
    Ok(Json(json!({"count": tools.len(), "tools": tools})))
}

#[derive(Debug, Deserialize)]
struct SearchQuery {
    q: String,
    k: Option<usize>,
    lang: Option<Language>,
}

async fn search_knowledge(
    State(state): State<Arc<ApiState>>,
    Query(q): Query<SearchQuery>,
) -> Result<Json<Value>, ApiError> {
    let kb = state.knowledge().ok_or_else(|| ApiError::Unavailable("no knowledge base is loaded".into()))?;
    let k = q.k.unwrap_or(state.defaults.k_default);
    if k == 0 {
        return Err(ApiError::Invalid("k must be at least 1".into()));
    }
    if q.q.trim().is_empty() {
        return Err(ApiError::Invalid("q is empty".into()));
    }
    let result = kb.query_knowledge(&q.q, k, q.lang).await.map_err(|e| match e {
        crate::rag::RagError::Gateway(g) => ApiError::Upstream(g.to_string()),
        crate::rag::RagError::EmptyIndex => ApiError::Unavailable(e.to_string()),
        other => ApiError::Invalid(other.to_string()),
    })?;
    Ok(Json(serde_json::to_value(result).expect("knowledge result serializes")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bind_policy() {
        let lo: SocketAddr = "127.0.0.1:8080".parse().unwrap();
        let open: SocketAddr = "0.0.0.0:8080".parse().unwrap();
        assert!(check_bind_policy(&lo, None, false).is_ok());
        assert!(check_bind_policy(&open, None, false).is_err());
        assert!(check_bind_policy(&open, Some("t"), false).is_ok());
        assert!(check_bind_policy(&open, None, true).is_ok());
    }

    #[test]
    fn overrides_merge_and_validate() {
        let d = SessionConfig::default();
        assert_eq!(merge_config(&d, &Value::Null).unwrap().k_default, 7);
        assert_eq!(merge_config(&d, &json!({"k_default": 3})).unwrap().k_default, 3);
        assert!(matches!(merge_config(&d, &json!({"k_default": 0})), Err(ApiError::Invalid(_))));
        assert!(matches!(merge_config(&d, &json!({"k": 3})), Err(ApiError::Invalid(_))));
        assert!(matches!(merge_config(&d, &json!([1])), Err(ApiError::Invalid(_))));
    }

    #[test]
    fn token_compare() {
        assert!(constant_time_eq(b"abc", b"abc"));
        assert!(!constant_time_eq(b"abc", b"abd"));
        assert!(!constant_time_eq(b"abc", b"ab"));
    }
}

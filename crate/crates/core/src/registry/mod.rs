//! Tool descriptors, structured JSON calls and failure-isolated parallel
//! execution against HTTP (or in-process) tool endpoints.

mod catalog;
pub mod mock;
mod schema;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use base64::Engine;
use chrono::{DateTime, Utc};
use futures::StreamExt;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::artifacts::ArtifactStore;
use crate::clock::{Clock, IdGenerator};
use crate::comprehension::Modality;
use crate::gateway::ToolSpec;

pub use catalog::{parse_catalog, DEFAULT_TOOL_BASE, SHIPPED_CATALOG};
pub use schema::{check_schema_document, coerce_scalars, CompiledSchema, SchemaIssue};

pub const DEFAULT_TOOL_TIMEOUT_SECS: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolTask {
    Classification,
    Detection,
    Segmentation,
    KeypointDetection,
    ReportGeneration,
    VisualQa,
    VisualDescription,
    Retrieval,
}

impl ToolTask {
    pub fn as_str(self) -> &'static str {
        match self {
            ToolTask::Classification => "classification",
            ToolTask::Detection => "detection",
            ToolTask::Segmentation => "segmentation",
            ToolTask::KeypointDetection => "keypoint_detection",
            ToolTask::ReportGeneration => "report_generation",
            ToolTask::VisualQa => "visual_qa",
            ToolTask::VisualDescription => "visual_description",
            ToolTask::Retrieval => "retrieval",
        }
    }
}

fn default_timeout() -> f64 {
    DEFAULT_TOOL_TIMEOUT_SECS
}

/// Registry entry. An empty `modalities` set marks a modality-agnostic tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(default)]
    pub modalities: BTreeSet<Modality>,
    pub task: ToolTask,
    #[serde(default)]
    pub functions: Vec<String>,
    pub description: String,
    pub arg_schema: Value,
    pub output_schema: Value,
    /// `http(s)://` URL, a path relative to the catalog's base URL, or `local://<name>`.
    pub endpoint: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub performance_note: String,
}

impl ToolDescriptor {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn is_local(&self) -> bool {
        self.endpoint.starts_with("local://")
    }

    /// The function-calling spec shown to the orchestrator.
    pub fn tool_spec(&self) -> ToolSpec {
        let mut description = self.description.trim().to_string();
        if self.modalities.is_empty() {
            description.push_str(" Modalities: any.");
        } else {
            let m: Vec<&str> = self.modalities.iter().map(|m| m.as_str()).collect();
            description.push_str(&format!(" Modalities: {}.", m.join(", ")));
        }
        description.push_str(&format!(" Task: {}.", self.task.as_str()));
        if !self.functions.is_empty() {
            description.push_str(&format!(" Covers: {}.", self.functions.join(", ")));
        }
        if !self.performance_note.is_empty() {
            description.push_str(&format!(" Reported performance: {}.", self.performance_note));
        }
        ToolSpec { name: self.name.clone(), description, parameters: self.arg_schema.clone() }
    }

    fn check_fields(&self) -> Result<(), String> {
        let name_ok = !self.name.is_empty()
            && self.name.len() <= 64
            && self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if !name_ok {
            return Err(format!("name {:?} must be 1-64 characters of [A-Za-z0-9_-]", self.name));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(format!("timeout_secs must be positive, got {}", self.timeout_secs));
        }
        let ep = &self.endpoint;
        if !(ep.starts_with("http://") || ep.starts_with("https://") || ep.starts_with("local://")) {
            return Err(format!("endpoint {ep:?} must be an http(s) URL or local://"));
        }
        if self.modalities.contains(&Modality::Unknown) {
            return Err("modalities may not contain unknown".into());
        }
        Ok(())
    }
}

/// A validated, timestamped invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub call_id: String,
    pub timestamp: DateTime<Utc>,
    pub tool_name: String,
    pub args: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    ToolError,
    Timeout,
    SchemaViolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub call_id: String,
    pub tool_name: String,
    pub status: ToolStatus,
    /// Present only for `ok` results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    /// The unvalidated payload of a `schema_violation`, kept so the orchestrator can inspect it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub issues: Vec<SchemaIssue>,
    /// Artifact-store ids.
    #[serde(default)]
    pub artifacts: Vec<String>,
    pub latency_ms: u64,
}

impl ToolResult {
    fn failed(call: &ToolCall, status: ToolStatus, error: String, started: Instant) -> Self {
        Self {
            call_id: call.call_id.clone(),
            tool_name: call.tool_name.clone(),
            status,
            payload: None,
            raw_payload: None,
            error: Some(error),
            issues: Vec::new(),
            artifacts: Vec::new(),
            latency_ms: started.elapsed().as_millis() as u64,
        }
    }
}

/// Binary output attached to a tool response, base64 on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireArtifact {
    pub media_type: String,
    pub data: String,
}

/// Body POSTed to a tool endpoint: the call itself plus the bytes of any
/// session image whose id appears among the arguments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRequest {
    #[serde(flatten)]
    pub call: ToolCall,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attachments: BTreeMap<String, WireArtifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResponse {
    /// `"ok"` or `"error"`.
    pub status: String,
    #[serde(default)]
    pub payload: Value,
    #[serde(default)]
    pub artifacts: Vec<WireArtifact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ToolResponse {
    pub fn ok(payload: Value) -> Self {
        Self { status: "ok".into(), payload, artifacts: Vec::new(), error: None }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self { status: "error".into(), payload: Value::Null, artifacts: Vec::new(), error: Some(message.into()) }
    }
}

/// Session resources available to a batch.
#[derive(Debug, Clone, Default)]
pub struct ExecutionContext {
    pub artifacts: Arc<ArtifactStore>,
    /// Uploaded image id to artifact-store id.
    pub images: BTreeMap<String, String>,
}

impl ExecutionContext {
    pub fn new(artifacts: Arc<ArtifactStore>) -> Self {
        Self { artifacts, images: BTreeMap::new() }
    }

    fn attachments_for(&self, args: &Value) -> BTreeMap<String, WireArtifact> {
        let mut out = BTreeMap::new();
        let mut stack = vec![args];
        while let Some(v) = stack.pop() {
            match v {
                Value::String(s) => {
                    if let Some(art) = self.images.get(s).and_then(|id| self.artifacts.get(id)) {
                        out.insert(
                            s.clone(),
                            WireArtifact {
                                media_type: art.media_type.clone(),
                                data: base64::engine::general_purpose::STANDARD.encode(&art.bytes),
                            },
                        );
                    }
                }
                Value::Array(a) => stack.extend(a),
                Value::Object(o) => stack.extend(o.values()),
                _ => {}
            }
        }
        out
    }
}

/// A tool served in-process, addressed as `local://<name>`.
#[async_trait]
pub trait LocalTool: Send + Sync {
    async fn invoke(&self, call: &ToolCall, ctx: &ExecutionContext) -> ToolResponse;
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("tool {0:?} is already registered")]
    Conflict(String),
    #[error("tool {0:?} is not registered")]
    UnknownTool(String),
    #[error("tool {tool:?}: invalid {which} at {}: {message}", if .path.is_empty() { "/" } else { .path.as_str() })]
    InvalidSchema { tool: String, which: &'static str, path: String, message: String },
    #[error("tool {tool:?}: {reason}")]
    InvalidDescriptor { tool: String, reason: String },
    #[error("arguments for {tool:?} violate its schema: {}", join_issues(.issues))]
    SchemaViolation { tool: String, issues: Vec<SchemaIssue> },
    #[error("catalog line {line}: {message}")]
    Catalog { line: usize, message: String },
    #[error("duplicate tool name {name:?} on catalog lines {first} and {second}")]
    Duplicate { name: String, first: usize, second: usize },
    #[error("catalog unreadable: {0}")]
    Io(#[from] std::io::Error),
}

fn join_issues(issues: &[SchemaIssue]) -> String {
    issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; ")
}

impl RegistryError {
    /// JSON-pointer paths of an argument schema violation.
    pub fn violation_paths(&self) -> Vec<&str> {
        match self {
            RegistryError::SchemaViolation { issues, .. } => issues.iter().map(|i| i.path.as_str()).collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug)]
struct RegisteredTool {
    descriptor: ToolDescriptor,
    args: CompiledSchema,
    output: CompiledSchema,
}

impl RegisteredTool {
    fn compile(descriptor: ToolDescriptor) -> Result<Self, RegistryError> {
        descriptor
            .check_fields()
            .map_err(|reason| RegistryError::InvalidDescriptor { tool: descriptor.name.clone(), reason })?;
        let schema_err = |which: &'static str, issue: SchemaIssue| RegistryError::InvalidSchema {
            tool: descriptor.name.clone(),
            which,
            path: issue.path,
            message: issue.message,
        };
        let args = CompiledSchema::compile(&descriptor.arg_schema).map_err(|i| schema_err("arg_schema", i))?;
        let output = CompiledSchema::compile(&descriptor.output_schema).map_err(|i| schema_err("output_schema", i))?;
        Ok(Self { descriptor, args, output })
    }
}

type ToolMap = BTreeMap<String, Arc<RegisteredTool>>;

/// Filter for [`ToolRegistry::list_tools`]. Modality filtering keeps tools
/// whose declared modality set intersects the requested one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ToolFilter {
    #[serde(default)]
    pub modalities: Option<BTreeSet<Modality>>,
    #[serde(default)]
    pub task: Option<ToolTask>,
}

impl ToolFilter {
    pub fn modality(m: Modality) -> Self {
        Self { modalities: Some(BTreeSet::from([m])), task: None }
    }

    pub fn task(task: ToolTask) -> Self {
        Self { modalities: None, task: Some(task) }
    }

    fn accepts(&self, d: &ToolDescriptor) -> bool {
        let modality_ok = self.modalities.as_ref().is_none_or(|wanted| wanted.iter().any(|m| d.modalities.contains(m)));
        modality_ok && self.task.is_none_or(|t| t == d.task)
    }
}

/// Concurrent-read, exclusive-write tool registry. Batches execute against
/// the snapshot taken when they start.
pub struct ToolRegistry {
    tools: RwLock<Arc<ToolMap>>,
    local: RwLock<HashMap<String, Arc<dyn LocalTool>>>,
    http: reqwest::Client,
    concurrency: Option<usize>,
}

impl Default for ToolRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolRegistry").field("tools", &self.len()).finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self {
            tools: RwLock::new(Arc::new(BTreeMap::new())),
            local: RwLock::new(HashMap::new()),
            http: reqwest::Client::new(),
            concurrency: None,
        }
    }

    /// Caps how many calls of one batch run at once. Defaults to the batch size.
    pub fn with_concurrency_limit(mut self, limit: usize) -> Self {
        self.concurrency = Some(limit.max(1));
        self
    }

    fn snapshot(&self) -> Arc<ToolMap> {
        self.tools.read().expect("registry lock poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.snapshot().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, name: &str) -> bool {
        self.snapshot().contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<ToolDescriptor> {
        self.snapshot().get(name).map(|t| t.descriptor.clone())
    }

    /// Registers a descriptor. Returns the tool id, which is its name.
    pub fn register_tool(&self, descriptor: ToolDescriptor, replace: bool) -> Result<String, RegistryError> {
        let tool = Arc::new(RegisteredTool::compile(descriptor)?);
        let name = tool.descriptor.name.clone();
        let mut guard = self.tools.write().expect("registry lock poisoned");
        if !replace && guard.contains_key(&name) {
            return Err(RegistryError::Conflict(name));
        }
        let mut next = (**guard).clone();
        next.insert(name.clone(), tool);
        *guard = Arc::new(next);
        Ok(name)
    }

    /// Registers a descriptor whose endpoint is served by `handler` in-process.
    pub fn register_local(
        &self,
        mut descriptor: ToolDescriptor,
        handler: Arc<dyn LocalTool>,
        replace: bool,
    ) -> Result<String, RegistryError> {
        descriptor.endpoint = format!("local://{}", descriptor.name);
        let name = descriptor.name.clone();
        // Install the handler first so the tool is never visible without it.
        let previous = self.local.write().expect("registry lock poisoned").insert(name.clone(), handler);
        match self.register_tool(descriptor, replace) {
            Ok(id) => Ok(id),
            Err(e) => {
                let mut local = self.local.write().expect("registry lock poisoned");
                match previous {
                    Some(p) => local.insert(name, p),
                    None => local.remove(&name),
                };
                Err(e)
            }
        }
    }

    pub fn remove_tool(&self, name: &str) -> bool {
        let mut guard = self.tools.write().expect("registry lock poisoned");
        if !guard.contains_key(name) {
            return false;
        }
        let mut next = (**guard).clone();
        next.remove(name);
        *guard = Arc::new(next);
        true
    }

    /// Descriptors matching `filter`, in name order.
    pub fn list_tools(&self, filter: &ToolFilter) -> Vec<ToolDescriptor> {
        self.snapshot().values().filter(|t| filter.accepts(&t.descriptor)).map(|t| t.descriptor.clone()).collect()
    }

    pub fn tool_specs(&self) -> Vec<ToolSpec> {
        self.snapshot().values().map(|t| t.descriptor.tool_spec()).collect()
    }

    /// Coerces and validates `raw_args`, then stamps a fresh call id and time.
    pub fn format_call(
        &self,
        tool_name: &str,
        raw_args: &Value,
        clock: &dyn Clock,
        ids: &IdGenerator,
    ) -> Result<ToolCall, RegistryError> {
        let snapshot = self.snapshot();
        let tool = snapshot.get(tool_name).ok_or_else(|| RegistryError::UnknownTool(tool_name.to_string()))?;
        let mut args = raw_args.clone();
        coerce_scalars(&tool.descriptor.arg_schema, &mut args);
        let issues = tool.args.issues(&args);
        if !issues.is_empty() {
            return Err(RegistryError::SchemaViolation { tool: tool_name.to_string(), issues });
        }
        Ok(ToolCall { call_id: ids.next_id(), timestamp: clock.now(), tool_name: tool_name.to_string(), args })
    }

    /// Runs every call concurrently. Results come back in input order; a failed
    /// or slow call only affects its own result.
    pub async fn execute_parallel(&self, calls: &[ToolCall], ctx: &ExecutionContext) -> Vec<ToolResult> {
        if calls.is_empty() {
            return Vec::new();
        }
        let tools = self.snapshot();
        let local = self.local.read().expect("registry lock poisoned").clone();
        let limit = self.concurrency.unwrap_or(calls.len()).max(1);
        // Index-based so the stream's closure is not higher-ranked over a borrow,
        // which would keep the future from being `Send` inside `tokio::spawn`.
        let (tools, local) = (&tools, &local);
        futures::stream::iter(0..calls.len())
            .map(|i| self.execute_one(tools, local, &calls[i], ctx))
            .buffered(limit)
            .collect()
            .await
    }

    async fn execute_one(
        &self,
        tools: &ToolMap,
        local: &HashMap<String, Arc<dyn LocalTool>>,
        call: &ToolCall,
        ctx: &ExecutionContext,
    ) -> ToolResult {
        let started = Instant::now();
        let Some(tool) = tools.get(&call.tool_name) else {
            return ToolResult::failed(
                call,
                ToolStatus::ToolError,
                format!("tool {:?} is not registered", call.tool_name),
                started,
            );
        };
        let timeout = tool.descriptor.timeout();
        let invocation = async {
            if tool.descriptor.is_local() {
                match local.get(&call.tool_name) {
                    Some(handler) => Ok(handler.invoke(call, ctx).await),
                    None => Err(format!("no in-process handler for {:?}", call.tool_name)),
                }
            } else {
                self.post(&tool.descriptor.endpoint, call, ctx).await
            }
        };
        let response = match tokio::time::timeout(timeout, invocation).await {
            Err(_) => {
                return ToolResult::failed(
                    call,
                    ToolStatus::Timeout,
                    format!("no response within {timeout:?}"),
                    started,
                )
            }
            Ok(Err(message)) => return ToolResult::failed(call, ToolStatus::ToolError, message, started),
            Ok(Ok(r)) => r,
        };
        if response.status != "ok" {
            let message = response.error.unwrap_or_else(|| format!("tool reported status {:?}", response.status));
            return ToolResult::failed(call, ToolStatus::ToolError, message, started);
        }
        let mut artifacts = Vec::with_capacity(response.artifacts.len());
        for (i, a) in response.artifacts.iter().enumerate() {
            match base64::engine::general_purpose::STANDARD.decode(a.data.as_bytes()) {
                Ok(bytes) => artifacts.push(ctx.artifacts.put(&bytes, &a.media_type)),
                Err(e) => {
                    return ToolResult::failed(
                        call,
                        ToolStatus::ToolError,
                        format!("artifact {i} is not base64: {e}"),
                        started,
                    )
                }
            }
        }
        let issues = tool.output.issues(&response.payload);
        let latency_ms = started.elapsed().as_millis() as u64;
        let (status, payload, raw_payload) = if issues.is_empty() {
            (ToolStatus::Ok, Some(response.payload), None)
        } else {
            (ToolStatus::SchemaViolation, None, Some(response.payload))
        };
        ToolResult {
            call_id: call.call_id.clone(),
            tool_name: call.tool_name.clone(),
            status,
            payload,
            raw_payload,
            error: None,
            issues,
            artifacts,
            latency_ms,
        }
    }

    async fn post(&self, url: &str, call: &ToolCall, ctx: &ExecutionContext) -> Result<ToolResponse, String> {
        let body = ToolRequest { call: call.clone(), attachments: ctx.attachments_for(&call.args) };
        let resp = self.http.post(url).json(&body).send().await.map_err(|e| format!("transport error: {e}"))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| format!("transport error: {e}"))?;
        if !status.is_success() {
            let snippet: String = text.chars().take(200).collect();
            return Err(format!("HTTP {}: {snippet}", status.as_u16()));
        }
        serde_json::from_str(&text).map_err(|e| format!("malformed tool response: {e}"))
    }

    /// Loads a line-delimited catalog. Either every entry registers or none does.
    pub fn load_catalog(&self, path: &std::path::Path) -> Result<usize, RegistryError> {
        let text = std::fs::read_to_string(path)?;
        self.load_catalog_str(&text, DEFAULT_TOOL_BASE)
    }

    /// Like [`load_catalog`](Self::load_catalog); relative endpoints resolve against `base_url`.
    pub fn load_catalog_str(&self, text: &str, base_url: &str) -> Result<usize, RegistryError> {
        let entries = parse_catalog(text, base_url)?;
        let mut compiled = Vec::with_capacity(entries.len());
        for (line, d) in entries {
            let tool =
                RegisteredTool::compile(d).map_err(|e| RegistryError::Catalog { line, message: e.to_string() })?;
            compiled.push((line, tool));
        }
        let mut guard = self.tools.write().expect("registry lock poisoned");
        let mut next = (**guard).clone();
        for (line, tool) in compiled {
            let name = tool.descriptor.name.clone();
            if next.contains_key(&name) {
                return Err(RegistryError::Catalog { line, message: RegistryError::Conflict(name).to_string() });
            }
            next.insert(name, Arc::new(tool));
        }
        let count = next.len() - guard.len();
        *guard = Arc::new(next);
        Ok(count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use serde_json::json;

    fn descriptor(name: &str) -> ToolDescriptor {
        ToolDescriptor {
            name: name.into(),
            code: None,
            modalities: BTreeSet::from([Modality::PanoramicRadiograph]),
            task: ToolTask::ReportGeneration,
            functions: vec!["panoramic report".into()],
            description: "Writes a report.".into(),
            arg_schema: json!({"type": "object", "properties": {"image_id": {"type": "string"}}, "required": ["image_id"]}),
            output_schema: json!({"type": "object", "properties": {"report": {"type": "string"}}, "required": ["report"]}),
            endpoint: "http://127.0.0.1:1/tools/x".into(),
            timeout_secs: 30.0,
            performance_note: String::new(),
        }
    }

    #[test]
    fn register_conflict_and_replace() {
        let reg = ToolRegistry::new();
        assert_eq!(reg.register_tool(descriptor("opg_report_generator"), false).unwrap(), "opg_report_generator");
        assert_eq!(reg.len(), 1);
        assert!(matches!(
            reg.register_tool(descriptor("opg_report_generator"), false),
            Err(RegistryError::Conflict(_))
        ));
        let mut d = descriptor("opg_report_generator");
        d.description = "Replaced.".into();
        reg.register_tool(d, true).unwrap();
        assert_eq!(reg.get("opg_report_generator").unwrap().description, "Replaced.");
        assert!(reg.remove_tool("opg_report_generator"));
        assert!(!reg.remove_tool("opg_report_generator"));
    }

    #[test]
    fn bad_schema_is_rejected_with_path() {
        let reg = ToolRegistry::new();
        let mut d = descriptor("t");
        d.arg_schema = json!({"type": "object", "required": "image_id"});
        let err = reg.register_tool(d, false).unwrap_err();
        match err {
            RegistryError::InvalidSchema { which, path, .. } => {
                assert_eq!(which, "arg_schema");
                assert_eq!(path, "/required");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn format_call_stamps_and_validates() {
        let reg = ToolRegistry::new();
        reg.register_tool(descriptor("tooth_numbering_detector"), false).unwrap();
        let clock = ManualClock::fixed();
        let ids = IdGenerator::sequential("call");
        let call = reg.format_call("tooth_numbering_detector", &json!({"image_id": "img-1"}), &clock, &ids).unwrap();
        assert_eq!(call.call_id, "call-1");
        assert_eq!(call.args, json!({"image_id": "img-1"}));
        let err = reg.format_call("tooth_numbering_detector", &json!({}), &clock, &ids).unwrap_err();
        assert_eq!(err.violation_paths(), vec!["/image_id"]);
        assert!(matches!(reg.format_call("nope", &json!({}), &clock, &ids), Err(RegistryError::UnknownTool(_))));
    }

    #[test]
    fn tool_spec_mentions_modalities_and_performance() {
        let mut d = descriptor("t");
        d.performance_note = "mAP50=97.1".into();
        let spec = d.tool_spec();
        assert!(spec.description.contains("panoramic_radiograph"));
        assert!(spec.description.contains("mAP50=97.1"));
        assert_eq!(spec.parameters, d.arg_schema);
    }
}

//! Per-session memory: one record per loop iteration plus the user turns,
//! with bounded prompt context and optional durable persistence.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::agent::Thoughts;
use crate::comprehension::StructuredInstruction;
use crate::rag::{Citation, KnowledgeItem};
use crate::registry::{ToolCall, ToolResult};
use crate::text::{count_tokens, truncate_to_tokens};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub iteration: u64,
    pub thoughts: Thoughts,
    pub calls: Vec<ToolCall>,
    pub results: Vec<ToolResult>,
    pub knowledge: Vec<KnowledgeItem>,
    pub at: DateTime<Utc>,
}

impl MemoryRecord {
    /// Calls and results must pair one-to-one by call id.
    pub fn validate(&self) -> Result<(), String> {
        if self.calls.len() != self.results.len() {
            return Err(format!(
                "iteration {}: {} calls but {} results",
                self.iteration,
                self.calls.len(),
                self.results.len()
            ));
        }
        let mut ids = HashSet::new();
        for c in &self.calls {
            if !ids.insert(c.call_id.as_str()) {
                return Err(format!("iteration {}: duplicate call id {}", self.iteration, c.call_id));
            }
        }
        for r in &self.results {
            if !ids.remove(r.call_id.as_str()) {
                return Err(format!("iteration {}: result {} has no matching call", self.iteration, r.call_id));
            }
        }
        if self.thoughts.needs_user_input && self.thoughts.ready_to_respond {
            return Err(format!("iteration {}: thoughts both ask the user and respond", self.iteration));
        }
        Ok(())
    }

    /// Prompt rendering, one field per line.
    fn fields(&self) -> Vec<String> {
        let mut out = vec![format!("### Iteration {}", self.iteration)];
        if !self.thoughts.text.trim().is_empty() {
            out.push(format!("Thought: {}", self.thoughts.text.trim()));
        }
        if let Some(d) = &self.thoughts.draft_response {
            out.push(format!("Answer given: {}", d.trim()));
        }
        for c in &self.calls {
            out.push(format!("Call {} {}({})", c.call_id, c.tool_name, c.args));
        }
        for r in &self.results {
            out.push(render_result(r));
        }
        for k in &self.knowledge {
            out.push(format!("Knowledge {}", k.render()));
        }
        out
    }
}

pub(crate) fn render_result(r: &ToolResult) -> String {
    let status = serde_json::to_value(r.status).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
    let mut line = format!("Result {} {} [{}]", r.call_id, r.tool_name, status);
    if let Some(p) = &r.payload {
        line.push_str(&format!(": {p}"));
    }
    if let Some(p) = &r.raw_payload {
        line.push_str(&format!(": unvalidated payload {p}"));
    }
    if !r.issues.is_empty() {
        let issues: Vec<String> = r.issues.iter().map(|i| i.to_string()).collect();
        line.push_str(&format!(" (schema issues: {})", issues.join("; ")));
    }
    if let Some(e) = &r.error {
        line.push_str(&format!(": {e}"));
    }
    if !r.artifacts.is_empty() {
        line.push_str(&format!(" artifacts: {}", r.artifacts.join(", ")));
    }
    line
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionMemory {
    pub session_id: String,
    pub records: Vec<MemoryRecord>,
    pub user_turns: Vec<StructuredInstruction>,
}

impl SessionMemory {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self { session_id: session_id.into(), ..Self::default() }
    }

    /// First violated invariant, if any.
    pub fn validate(&self) -> Result<(), String> {
        check_session_id(&self.session_id)?;
        let mut last: Option<u64> = None;
        for r in &self.records {
            if let Some(prev) = last {
                if r.iteration <= prev {
                    return Err(format!("record iterations not increasing: {} after {}", r.iteration, prev));
                }
            }
            r.validate()?;
            last = Some(r.iteration);
        }
        for (i, t) in self.user_turns.iter().enumerate() {
            t.validate().map_err(|e| format!("user turn {i}: {e}"))?;
        }
        Ok(())
    }

    pub fn last_iteration(&self) -> u64 {
        self.records.last().map_or(0, |r| r.iteration)
    }

    /// Every (book, page) recorded in this session.
    pub fn citations(&self) -> HashSet<Citation> {
        self.records.iter().flat_map(|r| r.knowledge.iter().map(KnowledgeItem::citation)).collect()
    }

    /// Bounded prompt context. The current (latest) user turn always comes
    /// first in the count; earlier turns and records then fill the remaining
    /// budget newest-first, the oldest admitted record cut at a line boundary.
    /// Output is chronological and never exceeds `token_budget` tokens.
    pub fn context_window(&self, token_budget: usize) -> String {
        if token_budget == 0 || (self.records.is_empty() && self.user_turns.is_empty()) {
            return String::new();
        }
        let mut remaining = token_budget;
        let current = self.user_turns.last().map(|t| {
            let mut text = format!("## Current request\n{}", t.render().trim_end());
            if count_tokens(&text) > remaining {
                text = truncate_to_tokens(&text, remaining).to_string();
            }
            remaining -= count_tokens(&text);
            (t.created_at, text)
        });

        enum Item<'a> {
            Turn(&'a StructuredInstruction),
            Record(&'a MemoryRecord),
        }
        let mut items: Vec<(DateTime<Utc>, u8, Item)> = Vec::new();
        let earlier = self.user_turns.len().saturating_sub(1);
        for t in &self.user_turns[..earlier] {
            items.push((t.created_at, 0, Item::Turn(t)));
        }
        for r in &self.records {
            items.push((r.at, 1, Item::Record(r)));
        }
        items.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));

        let header = "## Memory";
        let header_cost = count_tokens(header);
        let mut picked: Vec<String> = Vec::new();
        if remaining > header_cost && !items.is_empty() {
            remaining -= header_cost;
            for (_, _, item) in items.iter().rev() {
                let lines = match item {
                    Item::Turn(t) => vec![format!("Earlier request: {}", t.query.trim())],
                    Item::Record(r) => r.fields(),
                };
                let mut kept = Vec::new();
                for line in lines {
                    let cost = count_tokens(&line);
                    if cost > remaining {
                        break;
                    }
                    remaining -= cost;
                    kept.push(line);
                }
                let complete = matches!(item, Item::Record(r) if kept.len() == r.fields().len())
                    || matches!(item, Item::Turn(_) if kept.len() == 1);
                if !kept.is_empty() {
                    picked.push(kept.join("\n"));
                }
                if !complete {
                    break;
                }
            }
        }
        let mut out = Vec::new();
        if !picked.is_empty() {
            out.push(header.to_string());
            out.extend(picked.into_iter().rev());
        }
        if let Some((_, text)) = current {
            if !text.is_empty() {
                out.push(text);
            }
        }
        out.join("\n")
    }
}

fn check_session_id(id: &str) -> Result<(), String> {
    if id.is_empty() || id.len() > 128 || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(format!("session id {id:?} must be 1-128 characters of [A-Za-z0-9_-]"));
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("session {session}: iteration {iteration} already recorded")]
    DuplicateIteration { session: String, iteration: u64 },
    #[error("session {session}: iteration {iteration} is not after the last recorded iteration {last}")]
    OutOfOrder { session: String, iteration: u64, last: u64 },
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("corrupt session file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn save_session(memory: &SessionMemory, path: &Path) -> Result<(), MemoryError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let bytes = serde_json::to_vec(memory).map_err(std::io::Error::other)?;
    let tmp = path.with_extension("json.tmp");
    {
        use std::io::Write;
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_session(path: &Path) -> Result<SessionMemory, MemoryError> {
    let bytes = std::fs::read(path)?;
    let corrupt = |reason: String| MemoryError::Corrupt { path: path.to_path_buf(), reason };
    let memory: SessionMemory = serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
    memory.validate().map_err(corrupt)?;
    Ok(memory)
}

/// All sessions' memories. Appends are durable before they return when a
/// directory is configured.
#[derive(Debug, Default)]
pub struct MemoryStore {
    sessions: RwLock<HashMap<String, Arc<RwLock<SessionMemory>>>>,
    dir: Option<PathBuf>,
}

impl MemoryStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Persists under `dir`, recovering every session already saved there.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, MemoryError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let m = load_session(&path)?;
                sessions.insert(m.session_id.clone(), Arc::new(RwLock::new(m)));
            }
        }
        Ok(Self { sessions: RwLock::new(sessions), dir: Some(dir) })
    }

    fn path_for(&self, session_id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{session_id}.json")))
    }

    fn entry(&self, session_id: &str) -> Result<Arc<RwLock<SessionMemory>>, MemoryError> {
        check_session_id(session_id).map_err(MemoryError::Invalid)?;
        if let Some(s) = self.sessions.read().expect("memory lock poisoned").get(session_id) {
            return Ok(s.clone());
        }
        let mut guard = self.sessions.write().expect("memory lock poisoned");
        Ok(guard
            .entry(session_id.to_string())
            .or_insert_with(|| Arc::new(RwLock::new(SessionMemory::new(session_id))))
            .clone())
    }

    fn persist(&self, memory: &SessionMemory) -> Result<(), MemoryError> {
        match self.path_for(&memory.session_id) {
            Some(path) => save_session(memory, &path),
            None => Ok(()),
        }
    }

    /// Appends a record; returns the session's new record count.
    pub fn append(&self, session_id: &str, record: MemoryRecord) -> Result<usize, MemoryError> {
        record.validate().map_err(MemoryError::Invalid)?;
        let entry = self.entry(session_id)?;
        let mut memory = entry.write().expect("memory lock poisoned");
        if memory.records.iter().any(|r| r.iteration == record.iteration) {
            return Err(MemoryError::DuplicateIteration { session: session_id.into(), iteration: record.iteration });
        }
        let last = memory.last_iteration();
        if !memory.records.is_empty() && record.iteration < last {
            return Err(MemoryError::OutOfOrder { session: session_id.into(), iteration: record.iteration, last });
        }
        memory.records.push(record);
        if let Err(e) = self.persist(&memory) {
            memory.records.pop();
            return Err(e);
        }
        Ok(memory.records.len())
    }

    pub fn add_user_turn(&self, session_id: &str, turn: StructuredInstruction) -> Result<usize, MemoryError> {
        let entry = self.entry(session_id)?;
        let mut memory = entry.write().expect("memory lock poisoned");
        memory.user_turns.push(turn);
        if let Err(e) = self.persist(&memory) {
            memory.user_turns.pop();
            return Err(e);
        }
        Ok(memory.user_turns.len())
    }

    /// A consistent copy of the session's memory (empty if unknown).
    pub fn snapshot(&self, session_id: &str) -> SessionMemory {
        self.sessions
            .read()
            .expect("memory lock poisoned")
            .get(session_id)
            .map(|s| s.read().expect("memory lock poisoned").clone())
            .unwrap_or_else(|| SessionMemory::new(session_id))
    }

    pub fn last_iteration(&self, session_id: &str) -> u64 {
        self.sessions
            .read()
            .expect("memory lock poisoned")
            .get(session_id)
            .map_or(0, |s| s.read().expect("memory lock poisoned").last_iteration())
    }

    pub fn context_window(&self, session_id: &str, token_budget: usize) -> String {
        match self.sessions.read().expect("memory lock poisoned").get(session_id) {
            Some(s) => s.read().expect("memory lock poisoned").context_window(token_budget),
            None => String::new(),
        }
    }

    pub fn save(&self, session_id: &str, path: &Path) -> Result<(), MemoryError> {
        save_session(&self.snapshot(session_id), path)
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("memory lock poisoned").keys().cloned().collect();
        ids.sort();
        ids
    }
}

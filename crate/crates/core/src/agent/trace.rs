use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::watch;

use crate::clock::Clock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Instruction,
    Thought,
    ToolCall,
    ToolResult,
    Knowledge,
    UserPrompt,
    Response,
    Timeout,
    /// Terminal: the run failed (gateway unreachable, malformed orchestrator output).
    Error,
}

impl EventKind {
    pub fn is_terminal(self) -> bool {
        matches!(self, EventKind::Response | EventKind::UserPrompt | EventKind::Timeout | EventKind::Error)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Instruction => "instruction",
            EventKind::Thought => "thought",
            EventKind::ToolCall => "tool_call",
            EventKind::ToolResult => "tool_result",
            EventKind::Knowledge => "knowledge",
            EventKind::UserPrompt => "user_prompt",
            EventKind::Response => "response",
            EventKind::Timeout => "timeout",
            EventKind::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub payload: Value,
    pub at: DateTime<Utc>,
}

/// A session's append-only event log. Sequence numbers start at 1 and are
/// dense; readers can wait for events past a given sequence.
#[derive(Debug)]
pub struct TraceLog {
    events: Mutex<Vec<AgentEvent>>,
    latest: watch::Sender<u64>,
}

impl Default for TraceLog {
    fn default() -> Self {
        Self::new()
    }
}

impl TraceLog {
    pub fn new() -> Self {
        let (latest, _) = watch::channel(0);
        Self { events: Mutex::new(Vec::new()), latest }
    }

    pub fn emit(&self, clock: &dyn Clock, kind: EventKind, payload: Value) -> u64 {
        let mut events = self.events.lock().expect("trace lock poisoned");
        let seq = events.len() as u64 + 1;
        events.push(AgentEvent { seq, kind, payload, at: clock.now() });
        self.latest.send_replace(seq);
        seq
    }

    pub fn len(&self) -> usize {
        self.events.lock().expect("trace lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn last_seq(&self) -> u64 {
        *self.latest.borrow()
    }

    /// Events with `seq > from_seq`, in order.
    pub fn events_after(&self, from_seq: u64) -> Vec<AgentEvent> {
        let events = self.events.lock().expect("trace lock poisoned");
        let start = (from_seq as usize).min(events.len());
        events[start..].to_vec()
    }

    pub fn all(&self) -> Vec<AgentEvent> {
        self.events_after(0)
    }

    /// A receiver that changes whenever an event is appended.
    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.latest.subscribe()
    }

    /// Waits until some event has `seq > from_seq`.
    pub async fn wait_after(&self, from_seq: u64) {
        let mut rx = self.subscribe();
        let _ = rx.wait_for(|&latest| latest > from_seq).await;
    }
}

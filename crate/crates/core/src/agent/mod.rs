//! The time-budgeted observe / reason / act loop.

mod prompt;
mod runtime;
mod trace;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::comprehension::StructuredInstruction;
use crate::memory::render_result;
use crate::rag::{Citation, KnowledgeItem, DEFAULT_K};
use crate::registry::ToolResult;

pub use prompt::{orchestrator_system_prompt, parse_completion, CLARIFY_MARKER, CRITIQUE_FRAGMENT};
pub use runtime::{generate_timeout_response, AgentError, AgentRuntime};
pub use trace::{AgentEvent, EventKind, TraceLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RagMode {
    /// Retrieve with the raw user query after every tool step.
    PerIteration,
    /// Retrieval is a tool the orchestrator may call.
    #[default]
    AsTool,
    Both,
}

impl RagMode {
    pub fn exposes_tool(self) -> bool {
        matches!(self, RagMode::AsTool | RagMode::Both)
    }

    pub fn per_iteration(self) -> bool {
        matches!(self, RagMode::PerIteration | RagMode::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub t_max_secs: f64,
    pub max_iterations: u32,
    pub k_default: usize,
    pub rag_mode: RagMode,
    pub orchestrator_model: String,
    pub critique_prompt_enabled: bool,
    /// Token budget for the memory section of each reasoning prompt.
    pub context_token_budget: usize,
    /// Send uploaded images to the orchestrator with every reasoning call.
    pub attach_images: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            t_max_secs: 300.0,
            max_iterations: 10,
            k_default: DEFAULT_K,
            rag_mode: RagMode::AsTool,
            orchestrator_model: "orchestrator".into(),
            critique_prompt_enabled: true,
            context_token_budget: 4096,
            attach_images: true,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.t_max_secs.is_finite() && self.t_max_secs > 0.0) {
            return Err(format!("t_max_secs must be positive, got {}", self.t_max_secs));
        }
        if self.max_iterations < 1 {
            return Err("max_iterations must be at least 1".into());
        }
        if self.k_default < 1 {
            return Err("k_default must be at least 1".into());
        }
        if self.context_token_budget < 1 {
            return Err("context_token_budget must be at least 1".into());
        }
        Ok(())
    }

    pub fn t_max(&self) -> std::time::Duration {
        std::time::Duration::from_secs_f64(self.t_max_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposedAction {
    pub tool_name: String,
    pub raw_args: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Thoughts {
    pub text: String,
    pub proposed_actions: Vec<ProposedAction>,
    pub needs_user_input: bool,
    pub ready_to_respond: bool,
    /// The answer when responding, or the question when asking the user.
    pub draft_response: Option<String>,
}

impl Thoughts {
    pub fn validate(&self) -> Result<(), String> {
        if self.needs_user_input && self.ready_to_respond {
            return Err("needs_user_input and ready_to_respond are exclusive".into());
        }
        if self.ready_to_respond && !self.proposed_actions.is_empty() {
            return Err("a response cannot carry proposed actions".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Decision {
    RequestUserInput(String),
    Respond(String),
    Act(Vec<ProposedAction>),
}

pub const EMPTY_ACT_FALLBACK: &str =
    "I was unable to determine a further step for this request. Please rephrase it or add detail.";

pub fn decide(thoughts: &Thoughts) -> Decision {
    if thoughts.needs_user_input {
        let prompt = thoughts.draft_response.clone().unwrap_or_else(|| thoughts.text.clone());
        return Decision::RequestUserInput(prompt);
    }
    if thoughts.ready_to_respond {
        return Decision::Respond(thoughts.draft_response.clone().unwrap_or_else(|| thoughts.text.clone()));
    }
    if thoughts.proposed_actions.is_empty() {
        let text = thoughts.text.trim();
        return Decision::Respond(if text.is_empty() { EMPTY_ACT_FALLBACK.to_string() } else { text.to_string() });
    }
    Decision::Act(thoughts.proposed_actions.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub session_id: String,
    pub iteration: u64,
    pub current_instruction: StructuredInstruction,
    pub pending_observations: Vec<String>,
    pub started_at: DateTime<Utc>,
}

/// Successor state: tool results in call order, then knowledge in rank order.
pub fn observe(state: &AgentState, results: &[ToolResult], knowledge: &[KnowledgeItem]) -> AgentState {
    let mut pending_observations: Vec<String> = results.iter().map(render_result).collect();
    pending_observations.extend(knowledge.iter().map(|k| format!("Knowledge {}", k.render())));
    AgentState {
        session_id: state.session_id.clone(),
        iteration: state.iteration + 1,
        current_instruction: state.current_instruction.clone(),
        pending_observations,
        started_at: state.started_at,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalResponse {
    pub text: String,
    pub citations: Vec<Citation>,
    pub artifacts: Vec<String>,
    pub timed_out: bool,
    /// The run stopped to ask the user a question.
    pub awaiting_user: bool,
    pub trace_ref: String,
}

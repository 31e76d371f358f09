//! Time-budgeted tool-using agent runtime for dental imaging and knowledge
//! questions: comprehension, tool registry, retrieval, memory, evaluation and
//! an HTTP service, all driven through OpenAI-compatible model endpoints.

pub mod agent;
pub mod api;
pub mod artifacts;
pub mod clock;
pub mod comprehension;
pub mod eval;
pub mod gateway;
pub mod memory;
pub mod rag;
pub mod registry;
pub mod text;

pub use agent::{AgentEvent, AgentRuntime, EventKind, FinalResponse, RagMode, SessionConfig, TraceLog};
pub use comprehension::{Comprehender, Intent, Modality, ModalityLabel, StructuredInstruction};
pub use rag::{Citation, KnowledgeBase, KnowledgeItem, VectorIndex};
pub use registry::{ToolCall, ToolDescriptor, ToolRegistry, ToolResult, ToolStatus};

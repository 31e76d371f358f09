use std::collections::HashSet;
use std::sync::Arc;

use serde_json::{json, Value};

use super::prompt::{render_state, REPAIR_PROMPT};
use super::{
    decide, observe, orchestrator_system_prompt, parse_completion, AgentState, Decision, EventKind, FinalResponse,
    SessionConfig, Thoughts, TraceLog,
};
use crate::clock::{Clock, IdGenerator};
use crate::comprehension::StructuredInstruction;
use crate::gateway::{ChatMessage, ChatModel, GatewayError, ImageAttachment};
use crate::memory::{MemoryError, MemoryRecord, MemoryStore, SessionMemory};
use crate::rag::{Citation, KnowledgeBase, KnowledgeItem, KNOWLEDGE_SEARCH_TOOL};
use crate::registry::{ExecutionContext, ToolCall, ToolRegistry, ToolResult, ToolStatus};
use crate::text::Language;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("invalid session: {0}")]
    Config(String),
    #[error("orchestrator unreachable: {0}")]
    Gateway(#[from] GatewayError),
    #[error("orchestrator output unusable after repair: {0}")]
    Malformed(String),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

/// Everything one loop needs. Cheap to clone; sessions share the registry,
/// knowledge base and memory store.
#[derive(Clone)]
pub struct AgentRuntime {
    pub orchestrator: Arc<dyn ChatModel>,
    pub registry: Arc<ToolRegistry>,
    pub knowledge: Option<Arc<KnowledgeBase>>,
    pub memory: Arc<MemoryStore>,
    pub clock: Arc<dyn Clock>,
    pub ids: Arc<IdGenerator>,
}

enum Ending {
    Budget,
    IterationCap,
}

fn run_citations(records: &[&MemoryRecord]) -> Vec<Citation> {
    let mut seen = HashSet::new();
    records
        .iter()
        .flat_map(|r| r.knowledge.iter().map(KnowledgeItem::citation))
        .filter(|c| seen.insert(c.clone()))
        .collect()
}

fn run_artifacts(records: &[&MemoryRecord]) -> Vec<String> {
    let mut seen = HashSet::new();
    records
        .iter()
        .flat_map(|r| r.results.iter().flat_map(|res| res.artifacts.iter().cloned()))
        .filter(|a| seen.insert(a.clone()))
        .collect()
}

/// Template summary of what the run gathered before it was cut off. Makes no
/// model or tool call. Only records after `since_iteration` belong to the run.
pub fn generate_timeout_response(state: &AgentState, memory: &SessionMemory, since_iteration: u64) -> FinalResponse {
    let records: Vec<&MemoryRecord> = memory.records.iter().filter(|r| r.iteration > since_iteration).collect();
    let zh = state.current_instruction.language == Language::Zh;
    let mut text = if zh {
        "在时间预算内未能完成完整的回答。".to_string()
    } else {
        "I could not finish a complete answer within the time budget.".to_string()
    };
    if records.is_empty() {
        text.push_str(if zh { " 尚未取得任何进展。" } else { " No progress was made on this request." });
    } else {
        let results: Vec<String> = records
            .iter()
            .flat_map(|r| r.results.iter())
            .map(|r| {
                let status = serde_json::to_value(r.status)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default();
                format!("{} ({status})", r.tool_name)
            })
            .collect();
        text.push_str(&format!(" Steps completed: {}.", records.len()));
        if !results.is_empty() {
            text.push_str(&format!(" Tools run: {}.", results.join(", ")));
        }
        let citations = run_citations(&records);
        if !citations.is_empty() {
            let cited: Vec<String> = citations.iter().map(|c| format!("{}, p. {}", c.book_title, c.page)).collect();
            text.push_str(&format!(" Sources consulted: {}.", cited.join("; ")));
        }
        if let Some(last) = records.iter().rev().find_map(|r| {
            let t = r.thoughts.text.trim();
            (!t.is_empty()).then_some(t)
        }) {
            text.push_str(&format!(" Last reasoning: {last}"));
        }
    }
    FinalResponse {
        text,
        citations: run_citations(&records),
        artifacts: run_artifacts(&records),
        timed_out: true,
        awaiting_user: false,
        trace_ref: state.session_id.clone(),
    }
}

fn knowledge_from_result(result: &ToolResult) -> Vec<KnowledgeItem> {
    if result.tool_name != KNOWLEDGE_SEARCH_TOOL || result.status != ToolStatus::Ok {
        return Vec::new();
    }
    let Some(items) = result.payload.as_ref().and_then(|p| p.get("items")).and_then(Value::as_array) else {
        return Vec::new();
    };
    items
        .iter()
        .filter_map(|v| match serde_json::from_value::<KnowledgeItem>(v.clone()) {
            Ok(item) => Some(item),
            Err(e) => {
                tracing::warn!("discarding knowledge item without provenance: {e}");
                None
            }
        })
        .collect()
}

fn refusal(instruction: &StructuredInstruction) -> String {
    if instruction.language == Language::Zh {
        "抱歉，我只能回答与口腔医学和牙科影像相关的问题。".into()
    } else {
        "Sorry, I can only help with dental and oral-health questions, including analysis of dental images.".into()
    }
}

impl AgentRuntime {
    fn emit(&self, trace: &TraceLog, kind: EventKind, payload: Value) -> u64 {
        trace.emit(self.clock.as_ref(), kind, payload)
    }

    fn fail(&self, trace: &TraceLog, err: AgentError) -> AgentError {
        self.emit(trace, EventKind::Error, json!({"message": err.to_string()}));
        err
    }

    fn retrieval_tool_visible(&self, config: &SessionConfig) -> bool {
        config.rag_mode.exposes_tool() && self.registry.contains(KNOWLEDGE_SEARCH_TOOL)
    }

    /// One orchestrator completion, with one repair re-prompt if it is unusable.
    pub async fn reason(
        &self,
        state: &AgentState,
        config: &SessionConfig,
        ctx: &ExecutionContext,
    ) -> Result<Thoughts, AgentError> {
        let retrieval = self.retrieval_tool_visible(config);
        let system = orchestrator_system_prompt(config, retrieval.then_some(KNOWLEDGE_SEARCH_TOOL));
        let context = self.memory.context_window(&state.session_id, config.context_token_budget);
        let mut user = ChatMessage::user(render_state(state, &context));
        if config.attach_images {
            let images: Vec<ImageAttachment> = state
                .current_instruction
                .images
                .iter()
                .filter_map(|img| ctx.artifacts.get(&img.artifact_ref))
                .map(|a| ImageAttachment { media_type: a.media_type, data: a.bytes })
                .collect();
            user = user.with_images(images);
        }
        let tools: Vec<_> =
            self.registry.tool_specs().into_iter().filter(|s| retrieval || s.name != KNOWLEDGE_SEARCH_TOOL).collect();
        let mut messages = vec![ChatMessage::system(system), user];
        let first = self.orchestrator.chat(&messages, &tools).await?;
        if let Some(t) = parse_completion(&first) {
            return Ok(t);
        }
        messages.push(ChatMessage::assistant(first.text.clone().unwrap_or_default()));
        messages.push(ChatMessage::user(REPAIR_PROMPT));
        let second = self.orchestrator.chat(&messages, &tools).await?;
        parse_completion(&second).ok_or_else(|| {
            AgentError::Malformed(format!(
                "completion with text {:?} and {} tool calls",
                second.text.as_deref().unwrap_or(""),
                second.tool_calls.len()
            ))
        })
    }

    fn finish(&self, trace: &TraceLog, kind: EventKind, response: FinalResponse) -> FinalResponse {
        let payload = json!({
            "text": response.text,
            "citations": response.citations,
            "artifacts": response.artifacts,
            "timed_out": response.timed_out,
        });
        self.emit(trace, kind, payload);
        response
    }

    /// Runs the loop for one user turn until it responds, asks the user, or
    /// exhausts its time or iteration budget. Every step is appended to
    /// `trace`; failures end the trace with an `error` event.
    pub async fn run_session(
        &self,
        session_id: &str,
        instruction: StructuredInstruction,
        config: &SessionConfig,
        ctx: &ExecutionContext,
        trace: &TraceLog,
    ) -> Result<FinalResponse, AgentError> {
        let deadline = tokio::time::Instant::now() + config.t_max();
        self.emit(trace, EventKind::Instruction, serde_json::to_value(&instruction).unwrap_or(Value::Null));
        if let Err(e) = config.validate() {
            return Err(self.fail(trace, AgentError::Config(e)));
        }
        if let Err(e) = instruction.validate() {
            return Err(self.fail(trace, AgentError::Config(e.to_string())));
        }
        if let Err(e) = self.memory.add_user_turn(session_id, instruction.clone()) {
            return Err(self.fail(trace, e.into()));
        }
        if instruction.is_out_of_scope() {
            let response = FinalResponse {
                text: refusal(&instruction),
                citations: Vec::new(),
                artifacts: Vec::new(),
                timed_out: false,
                awaiting_user: false,
                trace_ref: session_id.to_string(),
            };
            return Ok(self.finish(trace, EventKind::Response, response));
        }

        let since = self.memory.last_iteration(session_id);
        let mut state = AgentState {
            session_id: session_id.to_string(),
            iteration: since,
            current_instruction: instruction,
            pending_observations: Vec::new(),
            started_at: self.clock.now(),
        };
        let run_records = |memory: &SessionMemory| -> (Vec<Citation>, Vec<String>) {
            let records: Vec<&MemoryRecord> = memory.records.iter().filter(|r| r.iteration > since).collect();
            (run_citations(&records), run_artifacts(&records))
        };

        loop {
            let ending = if tokio::time::Instant::now() >= deadline {
                Some(Ending::Budget)
            } else if state.iteration - since >= u64::from(config.max_iterations) {
                Some(Ending::IterationCap)
            } else {
                None
            };
            if let Some(ending) = ending {
                return Ok(self.time_out(trace, &state, since, ending));
            }

            let thoughts = match tokio::time::timeout_at(deadline, self.reason(&state, config, ctx)).await {
                Err(_) => return Ok(self.time_out(trace, &state, since, Ending::Budget)),
                Ok(Err(e)) => return Err(self.fail(trace, e)),
                Ok(Ok(t)) => t,
            };
            let iteration = state.iteration + 1;
            let mut payload = serde_json::to_value(&thoughts).unwrap_or(Value::Null);
            payload["iteration"] = json!(iteration);
            self.emit(trace, EventKind::Thought, payload);

            let record = |calls, results, knowledge| MemoryRecord {
                iteration,
                thoughts: thoughts.clone(),
                calls,
                results,
                knowledge,
                at: self.clock.now(),
            };
            match decide(&thoughts) {
                Decision::RequestUserInput(prompt) => {
                    if let Err(e) = self.memory.append(session_id, record(vec![], vec![], vec![])) {
                        return Err(self.fail(trace, e.into()));
                    }
                    let (citations, artifacts) = run_records(&self.memory.snapshot(session_id));
                    self.emit(trace, EventKind::UserPrompt, json!({"prompt": prompt}));
                    return Ok(FinalResponse {
                        text: prompt,
                        citations,
                        artifacts,
                        timed_out: false,
                        awaiting_user: true,
                        trace_ref: session_id.to_string(),
                    });
                }
                Decision::Respond(draft) => {
                    if let Err(e) = self.memory.append(session_id, record(vec![], vec![], vec![])) {
                        return Err(self.fail(trace, e.into()));
                    }
                    let (citations, artifacts) = run_records(&self.memory.snapshot(session_id));
                    let response = FinalResponse {
                        text: draft,
                        citations,
                        artifacts,
                        timed_out: false,
                        awaiting_user: false,
                        trace_ref: session_id.to_string(),
                    };
                    return Ok(self.finish(trace, EventKind::Response, response));
                }
                Decision::Act(actions) => {
                    let retrieval = self.retrieval_tool_visible(config);
                    let mut calls: Vec<ToolCall> = Vec::new();
                    let mut rejected: Vec<String> = Vec::new();
                    for action in &actions {
                        if action.tool_name == KNOWLEDGE_SEARCH_TOOL && !retrieval {
                            rejected.push(format!(
                                "Call to {} rejected: retrieval is not available as a tool",
                                action.tool_name
                            ));
                            continue;
                        }
                        match self.registry.format_call(
                            &action.tool_name,
                            &action.raw_args,
                            self.clock.as_ref(),
                            &self.ids,
                        ) {
                            Ok(call) => calls.push(call),
                            Err(e) => rejected.push(format!("Call to {} rejected: {e}", action.tool_name)),
                        }
                    }
                    for call in &calls {
                        self.emit(trace, EventKind::ToolCall, serde_json::to_value(call).unwrap_or(Value::Null));
                    }
                    let results =
                        match tokio::time::timeout_at(deadline, self.registry.execute_parallel(&calls, ctx)).await {
                            Ok(r) => r,
                            Err(_) => return Ok(self.time_out(trace, &state, since, Ending::Budget)),
                        };
                    for result in &results {
                        self.emit(trace, EventKind::ToolResult, serde_json::to_value(result).unwrap_or(Value::Null));
                    }
                    let mut knowledge: Vec<KnowledgeItem> = results.iter().flat_map(knowledge_from_result).collect();
                    if !knowledge.is_empty() {
                        self.emit(
                            trace,
                            EventKind::Knowledge,
                            json!({"iteration": iteration, "origin": "tool", "items": knowledge}),
                        );
                    }
                    if config.rag_mode.per_iteration() {
                        if let Some(kb) = &self.knowledge {
                            let query = state.current_instruction.query.clone();
                            let lang = Some(state.current_instruction.language);
                            match tokio::time::timeout_at(deadline, kb.query_knowledge(&query, config.k_default, lang))
                                .await
                            {
                                Err(_) => return Ok(self.time_out(trace, &state, since, Ending::Budget)),
                                Ok(Err(e)) => tracing::warn!("per-iteration retrieval failed: {e}"),
                                Ok(Ok(found)) => {
                                    self.emit(
                                        trace,
                                        EventKind::Knowledge,
                                        json!({"iteration": iteration, "origin": "per_iteration", "degraded": found.degraded, "items": found.items}),
                                    );
                                    knowledge.extend(found.items);
                                }
                            }
                        }
                    }
                    if let Err(e) = self.memory.append(session_id, record(calls, results.clone(), knowledge.clone())) {
                        return Err(self.fail(trace, e.into()));
                    }
                    state = observe(&state, &results, &knowledge);
                    state.pending_observations.extend(rejected);
                }
            }
        }
    }

    fn time_out(&self, trace: &TraceLog, state: &AgentState, since: u64, ending: Ending) -> FinalResponse {
        let memory = self.memory.snapshot(&state.session_id);
        let mut response = generate_timeout_response(state, &memory, since);
        if matches!(ending, Ending::IterationCap) {
            let note = if state.current_instruction.language == Language::Zh {
                "已达到最大推理步数。"
            } else {
                "The step limit was reached."
            };
            response.text = format!("{note} {}", response.text);
        }
        self.finish(trace, EventKind::Timeout, response)
    }
}

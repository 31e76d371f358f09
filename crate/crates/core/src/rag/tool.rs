use std::collections::BTreeSet;
use std::sync::Arc;

use async_trait::async_trait;
use serde_json::{json, Value};

use super::{KnowledgeBase, DEFAULT_K};
use crate::registry::{ExecutionContext, LocalTool, ToolCall, ToolDescriptor, ToolResponse, ToolTask};

pub const KNOWLEDGE_SEARCH_TOOL: &str = "knowledge_search";

/// Descriptor for retrieval exposed to the orchestrator as an ordinary tool.
pub fn knowledge_search_descriptor(default_k: usize) -> ToolDescriptor {
    ToolDescriptor {
        name: KNOWLEDGE_SEARCH_TOOL.into(),
        code: None,
        modalities: BTreeSet::new(),
        task: ToolTask::Retrieval,
        functions: vec!["dental textbook passages with book title and page".into()],
        description: "Searches the indexed dental textbooks and returns the most relevant passages with their book title and page number. Cite the book and page of any passage you rely on.".into(),
        arg_schema: json!({
            "type": "object",
            "properties": {
                "query": {"type": "string", "minLength": 1},
                "k": {"type": "integer", "minimum": 1, "maximum": 50, "default": default_k}
            },
            "required": ["query"],
            "additionalProperties": false
        }),
        output_schema: json!({
            "type": "object",
            "properties": {
                "items": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "properties": {
                            "chunk_id": {"type": "string"},
                            "text": {"type": "string"},
                            "book_title": {"type": "string", "minLength": 1},
                            "page": {"type": "integer", "minimum": 0},
                            "language": {"type": "string"},
                            "rank": {"type": "integer", "minimum": 1},
                            "retrieval_score": {"type": "number"},
                            "rerank_score": {"type": "number"}
                        },
                        "required": ["chunk_id", "text", "book_title", "page", "rank"]
                    }
                },
                "degraded": {"type": "boolean"}
            },
            "required": ["items"]
        }),
        endpoint: format!("local://{KNOWLEDGE_SEARCH_TOOL}"),
        timeout_secs: 30.0,
        performance_note: String::new(),
    }
}

pub struct KnowledgeSearchTool {
    kb: Arc<KnowledgeBase>,
    default_k: usize,
}

impl KnowledgeSearchTool {
    pub fn new(kb: Arc<KnowledgeBase>, default_k: usize) -> Self {
        Self { kb, default_k: if default_k == 0 { DEFAULT_K } else { default_k } }
    }
}

#[async_trait]
impl LocalTool for KnowledgeSearchTool {
    async fn invoke(&self, call: &ToolCall, _ctx: &ExecutionContext) -> ToolResponse {
        let Some(query) = call.args.get("query").and_then(Value::as_str) else {
            return ToolResponse::error("missing query");
        };
        let k = call.args.get("k").and_then(Value::as_u64).map_or(self.default_k, |k| k as usize);
        match self.kb.query_knowledge(query, k, None).await {
            Ok(result) => ToolResponse::ok(json!({"items": result.items, "degraded": result.degraded})),
            Err(e) => ToolResponse::error(e.to_string()),
        }
    }
}

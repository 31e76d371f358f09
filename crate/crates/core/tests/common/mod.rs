#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;
use std::time::Duration;

use dentagent_core::agent::{AgentRuntime, SessionConfig};
use dentagent_core::artifacts::ArtifactStore;
use dentagent_core::clock::{IdGenerator, ManualClock};
use dentagent_core::comprehension::{
    build_structured_instruction, InstructionImage, Intent, Modality, ModalityLabel, StructuredInstruction,
};
use dentagent_core::gateway::mock::{serve_scripted, MockScript, MockServer};
use dentagent_core::gateway::{ChatModel, EndpointConfig, EndpointRole, GatewayClient};
use dentagent_core::memory::MemoryStore;
use dentagent_core::rag::{
    build_index, knowledge_search_descriptor, ChunkingConfig, KnowledgeBase, KnowledgeSearchTool, Paragraph,
};
use dentagent_core::registry::mock::{annotated_png, serve_mock_tools, MockToolBehavior, MockToolServer};
use dentagent_core::registry::{parse_catalog, ExecutionContext, ToolDescriptor, ToolRegistry, SHIPPED_CATALOG};
use dentagent_core::text::Language;
use serde_json::Value;

pub fn catalog_descriptors(base: &str) -> Vec<ToolDescriptor> {
    parse_catalog(SHIPPED_CATALOG, base).unwrap().into_iter().map(|(_, d)| d).collect()
}

/// Mock tool server for the shipped catalog, plus a registry pointed at it.
pub async fn catalog_with_server(overrides: HashMap<String, MockToolBehavior>) -> (ToolRegistry, MockToolServer) {
    let server = serve_mock_tools(&catalog_descriptors("http://unused"), overrides, 0).await.unwrap();
    let registry = ToolRegistry::new();
    registry.load_catalog_str(SHIPPED_CATALOG, &server.base_url()).unwrap();
    (registry, server)
}

pub async fn gateway(script: MockScript) -> MockServer {
    serve_scripted(script, 0).await.unwrap()
}

pub fn client(server: &MockServer, role: EndpointRole, model: &str, timeout: Duration) -> Arc<GatewayClient> {
    let cfg = EndpointConfig::new(role, server.base_url(), model)
        .with_timeout(timeout)
        .with_retries(0, Duration::from_millis(10));
    Arc::new(GatewayClient::new(cfg).unwrap())
}

pub fn chat(server: &MockServer) -> Arc<dyn ChatModel> {
    client(server, EndpointRole::Chat, "orchestrator", Duration::from_secs(3))
}

pub fn paragraph(book: &str, page: u32, text: &str) -> Paragraph {
    Paragraph { text: text.into(), page, book_title: book.into(), language: Language::En }
}

/// Filler paragraphs about unrelated topics, so planted facts have to be found.
pub fn filler_paragraphs(n: usize) -> Vec<Paragraph> {
    let topics =
        ["orthodontic brackets", "denture adhesive", "enamel hypoplasia", "tooth eruption", "gingival recession"];
    (0..n)
        .map(|i| {
            let t = topics[i % topics.len()];
            paragraph(
                "Filler Handbook",
                (i + 1) as u32,
                &format!("Section {i} discusses {t} in general terms for students."),
            )
        })
        .collect()
}

/// Knowledge base whose embedder and reranker are the mock gateway.
pub async fn kb_over_gateway(server: &MockServer, paragraphs: &[Paragraph]) -> Arc<KnowledgeBase> {
    let embedder = client(server, EndpointRole::Embed, "embedder", Duration::from_secs(3));
    let reranker = client(server, EndpointRole::Rerank, "reranker", Duration::from_secs(3));
    let index = build_index(paragraphs, &ChunkingConfig::default(), embedder.as_ref()).await.unwrap();
    let kb = KnowledgeBase::new(embedder, reranker);
    kb.install(index).unwrap();
    Arc::new(kb)
}

pub fn register_knowledge_tool(registry: &ToolRegistry, kb: &Arc<KnowledgeBase>, k: usize) {
    registry
        .register_local(knowledge_search_descriptor(k), Arc::new(KnowledgeSearchTool::new(kb.clone(), k)), false)
        .unwrap();
}

pub fn runtime(chat: Arc<dyn ChatModel>, registry: ToolRegistry, kb: Option<Arc<KnowledgeBase>>) -> AgentRuntime {
    AgentRuntime {
        orchestrator: chat,
        registry: Arc::new(registry),
        knowledge: kb,
        memory: Arc::new(MemoryStore::in_memory()),
        clock: Arc::new(ManualClock::fixed()),
        ids: Arc::new(IdGenerator::sequential("call")),
    }
}

/// Context with one intraoral image stored as `img-1`.
pub fn image_context() -> (ExecutionContext, InstructionImage) {
    let store = Arc::new(ArtifactStore::new());
    let bytes = annotated_png("upload", "img-1");
    let artifact = store.put(&bytes, "image/png");
    let mut ctx = ExecutionContext::new(store);
    ctx.images.insert("img-1".into(), artifact.clone());
    let image = InstructionImage {
        image_id: "img-1".into(),
        artifact_ref: artifact,
        media_type: "image/png".into(),
        modality: ModalityLabel { value: Modality::IntraoralImage, confidence: 0.93 },
    };
    (ctx, image)
}

pub fn instruction(query: &str, images: Vec<InstructionImage>, intents: &[Intent]) -> StructuredInstruction {
    build_structured_instruction(query, images, intents.iter().copied().collect::<BTreeSet<_>>(), &ManualClock::fixed())
        .unwrap()
}

pub fn quick_config() -> SessionConfig {
    SessionConfig { t_max_secs: 10.0, attach_images: false, ..SessionConfig::default() }
}

/// Drops timing fields so two runs can be compared byte for byte.
pub fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for key in ["at", "timestamp", "created_at", "latency_ms"] {
                map.remove(key);
            }
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

pub mod api_fixture;
pub mod eval_fixtures;
pub mod ingest_fixtures;
pub mod scenarios;

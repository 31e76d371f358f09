//! Scripted evaluation subjects shared by the eval tests and the acceptance run.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use dentagent_core::agent::{RagMode, SessionConfig};
use dentagent_core::artifacts::ArtifactStore;
use dentagent_core::eval::{run_eval, AgentSubject, EvalOptions, EvalReport, MCQItem, Subject};
use dentagent_core::gateway::mock::{Matcher, MockResponse, MockScript, MockServer};
use dentagent_core::gateway::EndpointRole;
use dentagent_core::rag::KnowledgeItem;
use dentagent_core::registry::ExecutionContext;
use serde_json::json;
use std::sync::Arc;

use super::*;

/// (predicted, gold, expected) for the exact-match rule.
pub const EXACT_MATCH_TABLE: [(&str, &str, bool); 20] = [
    ("A", "A", true),
    ("B", "A", false),
    ("A", "AC", false),
    ("AC", "AC", true),
    ("CA", "AC", true),
    ("ABC", "AC", false),
    ("", "A", false),
    ("ABCD", "ABCD", true),
    ("ABC", "ABCD", false),
    ("D", "ABCD", false),
    ("BD", "DB", true),
    ("AB", "CD", false),
    ("E", "E", true),
    ("AE", "A", false),
    ("AAC", "AC", true),
    ("C", "AC", false),
    ("BCD", "BDC", true),
    ("ABDE", "ABCDE", false),
    ("ABCDE", "ABCDE", true),
    ("Z", "A", false),
];

/// Independent check: sort and dedupe both sides as plain vectors.
pub fn exact_match_oracle(pred: &str, gold: &str) -> bool {
    let norm = |s: &str| {
        let mut v: Vec<char> = s.chars().collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    norm(pred) == norm(gold)
}

pub fn mcq(id: &str, category: &str, stem: &str, gold: &str) -> MCQItem {
    MCQItem {
        item_id: id.into(),
        category: category.into(),
        stem: stem.into(),
        options: "ABCD".chars().map(|c| (c, format!("choice {c} for {id}"))).collect(),
        gold: gold.chars().collect(),
    }
}

/// Two categories: Endo answered perfectly, Perio half right.
pub fn four_items() -> Vec<MCQItem> {
    vec![
        mcq("q1", "Endo", "Stem q1-endo: which irrigant dissolves organic tissue?", "A"),
        mcq("q2", "Endo", "Stem q2-endo: which findings suggest a cracked tooth?", "BD"),
        mcq("q3", "Perio", "Stem q3-perio: which index scores bleeding?", "C"),
        mcq("q4", "Perio", "Stem q4-perio: which bacteria are keystone pathogens?", "AC"),
    ]
}

/// Answers q1..q3 correctly and gives a partial set for q4.
pub async fn four_item_gateway() -> MockServer {
    let chat = |needle: &str| Matcher::any(EndpointRole::Chat).contains(needle);
    gateway(
        MockScript::new()
            .on(chat("q1-endo"), MockResponse::chat_text("Sodium hypochlorite. Answer: A"))
            .on(chat("q2-endo"), MockResponse::chat_text("Answer: D, B"))
            .on(chat("q3-perio"), MockResponse::chat_text("答案：C"))
            .on(chat("q4-perio"), MockResponse::chat_text("Answer: A")),
    )
    .await
}

pub async fn four_item_report() -> EvalReport {
    let gw = four_item_gateway().await;
    run_eval(&Subject::BareChat(chat(&gw)), &four_items(), &EvalOptions::default()).await
}

pub struct Uplift {
    pub bare: EvalReport,
    pub agent: EvalReport,
    pub knowledge: Vec<KnowledgeItem>,
}

fn planted_fact(i: usize, gold: char) -> String {
    format!("Registry note zorvik{i}: the approved management for this entity is listed as option {gold}.")
}

/// Five items whose answers are only knowable from planted corpus facts. The
/// scripted model answers correctly only when a fact is present in its
/// request, otherwise it answers with a wrong letter.
pub async fn rag_uplift() -> Uplift {
    let golds = ['A', 'B', 'C', 'A', 'B'];
    let items: Vec<MCQItem> = golds
        .iter()
        .enumerate()
        .map(|(i, g)| {
            mcq(
                &format!("u{i}"),
                "Registry",
                &format!("What is the approved management for entity zorvik{i}?"),
                &g.to_string(),
            )
        })
        .collect();
    let mut script = MockScript::new().with_hash_embeddings(64).with_lexical_rerank();
    for (i, g) in golds.iter().enumerate() {
        script = script.on(
            Matcher::any(EndpointRole::Chat).contains(planted_fact(i, *g)).contains(format!("entity zorvik{i}?")),
            MockResponse::chat_text(&format!("The registry note settles it. Answer: {g}")),
        );
    }
    for i in 0..golds.len() {
        script = script.on(
            Matcher::any(EndpointRole::Chat).contains("## Step 1").contains(format!("entity zorvik{i}?")),
            MockResponse::chat_tool_calls(&[(
                "knowledge_search",
                json!({"query": format!("zorvik{i} approved management")}),
            )]),
        );
    }
    script = script
        .on(Matcher::any(EndpointRole::Chat), MockResponse::chat_text("Without a source I would guess. Answer: D"));
    let gw = gateway(script).await;

    let mut paragraphs = filler_paragraphs(30);
    for (i, g) in golds.iter().enumerate() {
        paragraphs.push(paragraph("Clinical Registry Manual", 40 + i as u32, &planted_fact(i, *g)));
    }
    let kb = kb_over_gateway(&gw, &paragraphs).await;
    let registry = dentagent_core::registry::ToolRegistry::new();
    register_knowledge_tool(&registry, &kb, 7);
    let rt = runtime(chat(&gw), registry, Some(kb));
    let config = SessionConfig { rag_mode: RagMode::AsTool, ..quick_config() };
    let agent = AgentSubject { runtime: rt, config, ctx: ExecutionContext::new(Arc::new(ArtifactStore::new())) };

    let bare = run_eval(&Subject::BareChat(chat(&gw)), &items, &EvalOptions::default()).await;
    let agent_subject = Subject::Agent(agent.clone());
    let agent_report = run_eval(&agent_subject, &items, &EvalOptions::default()).await;

    // Each item ran in its own in-memory session; rebuild the cited items from
    // a fresh query per planted entity so provenance can be inspected.
    let mut knowledge = Vec::new();
    for i in 0..golds.len() {
        let found = agent
            .runtime
            .knowledge
            .as_ref()
            .unwrap()
            .query_knowledge(&format!("zorvik{i} approved management"), 7, None)
            .await
            .unwrap();
        knowledge.extend(found.items);
    }
    Uplift { bare, agent: agent_report, knowledge }
}

/// The published subspecialty distribution used to size the synthetic benchmark.
pub const CATEGORY_COUNTS: [(&str, usize); 11] = [
    ("Endo", 133),
    ("Perio", 89),
    ("OMFS", 180),
    ("Prosth", 168),
    ("Ortho", 24),
    ("OMD", 54),
    ("PedDent", 28),
    ("OMFR", 12),
    ("PrevDent", 41),
    ("OralEpi", 29),
    ("OMFP", 40),
];

pub fn synthetic_benchmark_jsonl() -> String {
    let mut out = String::new();
    let mut n = 0;
    for (cat, count) in CATEGORY_COUNTS {
        for j in 0..count {
            n += 1;
            let options: BTreeMap<char, String> = "ABCDE".chars().map(|c| (c, format!("选项{c}"))).collect();
            let gold: BTreeSet<char> = if j % 3 == 0 { BTreeSet::from(['A', 'C']) } else { BTreeSet::from(['B']) };
            let item = MCQItem {
                item_id: format!("{cat}-{n:04}"),
                category: cat.into(),
                stem: format!("题目{n}"),
                options,
                gold,
            };
            out.push_str(&serde_json::to_string(&item).unwrap());
            out.push('\n');
        }
    }
    out
}

pub fn counts_by_category(items: &[MCQItem]) -> HashMap<String, usize> {
    let mut m = HashMap::new();
    for i in items {
        *m.entry(i.category.clone()).or_insert(0) += 1;
    }
    m
}

//! Randomized fixtures shared by the focused tests and the acceptance run.

use std::sync::Arc;

use chrono::{TimeZone, Utc};
use dentagent_core::agent::{ProposedAction, Thoughts};
use dentagent_core::gateway::{Embedder, HashEmbedder, LexicalReranker};
use dentagent_core::memory::{MemoryRecord, SessionMemory};
use dentagent_core::rag::{
    build_index, retrieve, ChunkingConfig, KnowledgeBase, KnowledgeItem, Paragraph, RawKnowledgeItem, VectorIndex,
};
use dentagent_core::registry::{ToolCall, ToolResult, ToolStatus};
use dentagent_core::text::Language;
use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use serde_json::json;

const VOCAB: &[&str] = &[
    "caries",
    "enamel",
    "dentin",
    "pulp",
    "gingiva",
    "periodontal",
    "ligament",
    "alveolar",
    "bone",
    "crown",
    "root",
    "canal",
    "apical",
    "lesion",
    "radiograph",
    "fluoride",
    "sealant",
    "plaque",
    "calculus",
    "abscess",
    "molar",
    "premolar",
    "incisor",
    "canine",
    "occlusion",
    "malocclusion",
    "bracket",
    "implant",
    "abutment",
    "extraction",
    "biopsy",
    "leukoplakia",
    "carcinoma",
    "fibrosis",
    "mucosa",
    "saliva",
    "erosion",
    "attrition",
    "restoration",
    "composite",
];
const BOOKS: &[&str] = &["Operative Dentistry", "Oral Pathology", "Periodontology", "Endodontics", "Orthodontics"];

pub fn random_text(rng: &mut StdRng, words: std::ops::RangeInclusive<usize>) -> String {
    let n = rng.random_range(words);
    (0..n).map(|_| *VOCAB.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn random_corpus(rng: &mut StdRng, n: usize) -> Vec<Paragraph> {
    (0..n)
        .map(|_| Paragraph {
            text: random_text(rng, 4..=14),
            page: rng.random_range(1..=600),
            book_title: BOOKS.choose(rng).unwrap().to_string(),
            language: Language::En,
        })
        .collect()
}

/// Brute-force ranking: every cosine in f64 from the stored f32 unit vectors,
/// full sort by score descending then chunk id ascending.
pub fn oracle_ranking(index: &VectorIndex, query_vec: &[f32], n: usize) -> Vec<String> {
    let norm = query_vec.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    let q: Vec<f32> = query_vec.iter().map(|&x| (f64::from(x) / norm) as f32).collect();
    let mut scored: Vec<(f64, &str)> = index
        .chunks()
        .iter()
        .map(|c| {
            let dot = c.embedding.iter().zip(&q).fold(0.0f64, |acc, (&a, &b)| acc + f64::from(a) * f64::from(b));
            (dot, c.chunk_id.as_str())
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored.into_iter().take(n).map(|(_, id)| id.to_string()).collect()
}

#[derive(Debug, Default)]
pub struct OracleReport {
    pub corpora: usize,
    pub queries: usize,
    pub ranking_mismatches: usize,
    pub count_mismatches: usize,
    pub k7_checks: usize,
    pub items: Vec<KnowledgeItem>,
}

/// Random corpora of 1..=1000 chunks; for each, random queries checked against the oracle.
pub async fn retrieval_oracle(corpora: usize, seed: u64) -> OracleReport {
    let mut rng = StdRng::seed_from_u64(seed);
    let embedder = Arc::new(HashEmbedder::new(48));
    let mut report = OracleReport::default();
    for c in 0..corpora {
        // A few small corpora exercise the fewer-than-2K branch.
        let n = if c % 10 == 0 { rng.random_range(1..=13) } else { rng.random_range(14..=1000) };
        let paragraphs = random_corpus(&mut rng, n);
        let index = build_index(&paragraphs, &ChunkingConfig::default(), embedder.as_ref()).await.unwrap();
        assert_eq!(index.len(), n);
        let kb = KnowledgeBase::new(embedder.clone(), Arc::new(LexicalReranker));
        kb.install(index.clone()).unwrap();
        report.corpora += 1;
        for qi in 0..3 {
            let query = random_text(&mut rng, 2..=6);
            let k = if qi == 0 { 7 } else { rng.random_range(1..=12) };
            let candidates = retrieve(&query, k, &index, embedder.as_ref()).await.unwrap();
            let got: Vec<String> = candidates.iter().map(|c| c.chunk.chunk_id.clone()).collect();
            let qv = embedder.embed(std::slice::from_ref(&query)).await.unwrap().remove(0);
            let expected = oracle_ranking(&index, &qv, (2 * k).min(n));
            report.queries += 1;
            if got != expected {
                report.ranking_mismatches += 1;
            }
            let result = kb.query_knowledge(&query, k, Some(Language::En)).await.unwrap();
            let candidate_count = (2 * k).min(n);
            if result.candidate_count != candidate_count || result.items.len() != k.min(candidate_count) {
                report.count_mismatches += 1;
            }
            if k == 7 && n >= 14 {
                report.k7_checks += 1;
                if result.candidate_count != 14 || result.items.len() != 7 {
                    report.count_mismatches += 1;
                }
            }
            report.items.extend(result.items);
        }
    }
    report
}

fn knowledge_item(rng: &mut StdRng, rank: usize) -> KnowledgeItem {
    KnowledgeItem::try_from(RawKnowledgeItem {
        chunk_id: format!("{:016x}", rng.random::<u64>()),
        text: random_text(rng, 3..=10),
        book_title: BOOKS.choose(rng).unwrap().to_string(),
        page: Some(rng.random_range(1..=900)),
        language: if rng.random_bool(0.3) { Language::Zh } else { Language::En },
        source: "main".into(),
        retrieval_score: rng.random_range(-1.0..=1.0),
        rerank_score: rng.random_range(-5.0..=5.0),
        rank,
    })
    .unwrap()
}

/// A structurally valid session with 0..=6 records and 1..=3 user turns.
pub fn random_session(rng: &mut StdRng, id: &str) -> SessionMemory {
    let base = Utc.with_ymd_and_hms(2025, 3, 1, 8, 0, 0).unwrap();
    let mut memory = SessionMemory::new(id);
    for t in 0..rng.random_range(1..=3) {
        memory.user_turns.push(super::instruction(
            &random_text(rng, 3..=9),
            vec![],
            &[dentagent_core::comprehension::Intent::Education],
        ));
        memory.user_turns[t].created_at = base + chrono::Duration::milliseconds(rng.random_range(0..1_000_000));
    }
    let records = rng.random_range(0..=6);
    let mut iteration = 0;
    for r in 0..records {
        iteration += rng.random_range(1..=2);
        let last = r + 1 == records;
        let n_calls = if last { 0 } else { rng.random_range(0..=3) };
        let at = base + chrono::Duration::milliseconds(rng.random_range(0..1_000_000_000));
        let calls: Vec<ToolCall> = (0..n_calls)
            .map(|i| ToolCall {
                call_id: format!("call-{iteration}-{i}"),
                timestamp: at,
                tool_name: "intraoral_caries_detector".into(),
                args: json!({"image_id": "img-1", "confidence_threshold": rng.random_range(0.0..1.0)}),
            })
            .collect();
        let results = calls
            .iter()
            .map(|c| {
                let ok = rng.random_bool(0.7);
                ToolResult {
                    call_id: c.call_id.clone(),
                    tool_name: c.tool_name.clone(),
                    status: if ok { ToolStatus::Ok } else { ToolStatus::ToolError },
                    payload: ok.then(|| json!({"detections": [{"label": "caries", "score": rng.random_range(0.0..1.0), "bbox": [1, 2, 3, 4]}]})),
                    raw_payload: None,
                    error: (!ok).then(|| "HTTP 500".to_string()),
                    issues: Vec::new(),
                    artifacts: if ok { vec![format!("{:064x}", rng.random::<u128>())] } else { Vec::new() },
                    latency_ms: rng.random_range(0..5000),
                }
            })
            .collect();
        let knowledge = (0..rng.random_range(0..=3)).map(|i| knowledge_item(rng, i + 1)).collect();
        let thoughts = if last {
            Thoughts {
                text: random_text(rng, 2..=8),
                ready_to_respond: true,
                draft_response: Some(random_text(rng, 3..=12)),
                ..Thoughts::default()
            }
        } else {
            Thoughts {
                text: random_text(rng, 2..=8),
                proposed_actions: calls
                    .iter()
                    .map(|c| ProposedAction { tool_name: c.tool_name.clone(), raw_args: c.args.clone() })
                    .collect(),
                ..Thoughts::default()
            }
        };
        memory.records.push(MemoryRecord { iteration, thoughts, calls, results, knowledge, at });
    }
    memory
}

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use super::index::normalize;
use super::{KnowledgeChunk, LanguageRouting, RagError, VectorIndex};
use crate::gateway::{Embedder, Reranker};
use crate::text::{detect_language, Language};

/// A first-stage hit: a chunk and its cosine similarity to the query.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub chunk: KnowledgeChunk,
    pub score: f64,
    /// Namespace of the index the chunk came from.
    pub source: String,
}

/// Where a piece of knowledge was printed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Citation {
    pub book_title: String,
    pub page: u32,
}

/// Unvalidated form of [`KnowledgeItem`], used for deserialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawKnowledgeItem {
    pub chunk_id: String,
    pub text: String,
    pub book_title: String,
    pub page: Option<u32>,
    pub language: Language,
    #[serde(default)]
    pub source: String,
    pub retrieval_score: f64,
    pub rerank_score: f64,
    pub rank: usize,
}

/// A reranked chunk with its citation. Construction fails without a book
/// title and page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKnowledgeItem")]
pub struct KnowledgeItem {
    chunk_id: String,
    text: String,
    book_title: String,
    page: u32,
    language: Language,
    source: String,
    retrieval_score: f64,
    rerank_score: f64,
    rank: usize,
}

impl TryFrom<RawKnowledgeItem> for KnowledgeItem {
    type Error = RagError;

    fn try_from(raw: RawKnowledgeItem) -> Result<Self, RagError> {
        if raw.book_title.trim().is_empty() {
            return Err(RagError::MissingProvenance(format!("chunk {} has no book title", raw.chunk_id)));
        }
        let page =
            raw.page.ok_or_else(|| RagError::MissingProvenance(format!("chunk {} has no page", raw.chunk_id)))?;
        if raw.rank == 0 {
            return Err(RagError::MissingProvenance(format!("chunk {} has rank 0", raw.chunk_id)));
        }
        Ok(Self {
            chunk_id: raw.chunk_id,
            text: raw.text,
            book_title: raw.book_title,
            page,
            language: raw.language,
            source: raw.source,
            retrieval_score: raw.retrieval_score,
            rerank_score: raw.rerank_score,
            rank: raw.rank,
        })
    }
}

impl KnowledgeItem {
    pub fn chunk_id(&self) -> &str {
        &self.chunk_id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn book_title(&self) -> &str {
        &self.book_title
    }

    pub fn page(&self) -> u32 {
        self.page
    }

    pub fn language(&self) -> Language {
        self.language
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn retrieval_score(&self) -> f64 {
        self.retrieval_score
    }

    pub fn rerank_score(&self) -> f64 {
        self.rerank_score
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn citation(&self) -> Citation {
        Citation { book_title: self.book_title.clone(), page: self.page }
    }

    /// One-line rendering for prompts.
    pub fn render(&self) -> String {
        format!("[{}] {} (p. {}): {}", self.rank, self.book_title, self.page, self.text)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Scored<'a> {
    score: f64,
    id: &'a str,
    slot: (usize, usize),
}

impl Eq for Scored<'_> {}

impl Ord for Scored<'_> {
    /// Greater is better: higher score, then smaller chunk id.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score.total_cmp(&other.score).then_with(|| other.id.cmp(self.id))
    }
}

impl PartialOrd for Scored<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

const BLOCK_ROWS: usize = 1024;
const PARALLEL_MIN_CELLS: usize = 1 << 22;

fn scan_block<'a>(
    index: &'a VectorIndex,
    slot: usize,
    query: &[f32],
    rows: std::ops::Range<usize>,
    n: usize,
    language: Option<Language>,
) -> BinaryHeap<std::cmp::Reverse<Scored<'a>>> {
    let mut heap = BinaryHeap::with_capacity(n + 1);
    for i in rows {
        let chunk = index.chunk(i);
        if language.is_some_and(|l| chunk.language != l) {
            continue;
        }
        let s = Scored { score: dot(query, index.row(i)), id: &chunk.chunk_id, slot: (slot, i) };
        if heap.len() < n {
            heap.push(std::cmp::Reverse(s));
        } else if let Some(worst) = heap.peek() {
            if s > worst.0 {
                heap.pop();
                heap.push(std::cmp::Reverse(s));
            }
        }
    }
    heap
}

/// Exact top-`n` over several indexes by cosine (dot product of unit
/// vectors), best first, ties broken by chunk id ascending. Returns
/// (index slot, row, score).
pub fn select_top(
    indexes: &[&VectorIndex],
    query: &[f32],
    n: usize,
    language: Option<Language>,
) -> Vec<(usize, usize, f64)> {
    if n == 0 {
        return Vec::new();
    }
    let mut blocks = Vec::new();
    for (slot, index) in indexes.iter().enumerate() {
        let mut start = 0;
        while start < index.len() {
            let end = (start + BLOCK_ROWS).min(index.len());
            blocks.push((slot, start..end));
            start = end;
        }
    }
    let cells: usize = indexes.iter().map(|i| i.len() * i.dimension()).sum();
    let heaps: Vec<_> = if cells >= PARALLEL_MIN_CELLS && blocks.len() > 1 {
        let workers = std::thread::available_parallelism().map_or(1, |p| p.get()).min(blocks.len());
        let per = blocks.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = blocks
                .chunks(per)
                .map(|group| {
                    scope.spawn(move || {
                        group
                            .iter()
                            .map(|(slot, rows)| scan_block(indexes[*slot], *slot, query, rows.clone(), n, language))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("scan worker panicked")).collect()
        })
    } else {
        blocks.iter().map(|(slot, rows)| scan_block(indexes[*slot], *slot, query, rows.clone(), n, language)).collect()
    };
    let mut all: Vec<Scored> = heaps.into_iter().flat_map(|h| h.into_iter().map(|r| r.0)).collect();
    all.sort_unstable_by(|a, b| b.cmp(a));
    all.truncate(n);
    all.into_iter().map(|s| (s.slot.0, s.slot.1, s.score)).collect()
}

async fn embed_query(embedder: &dyn Embedder, query: &str) -> Result<Vec<f32>, RagError> {
    let mut vs = embedder.embed(&[query.to_string()]).await?;
    if vs.len() != 1 {
        return Err(RagError::BatchSize { expected: 1, found: vs.len() });
    }
    normalize(&vs.remove(0)).ok_or(RagError::ZeroVector(0))
}

fn check_model(index: &VectorIndex, embedder: &dyn Embedder) -> Result<(), RagError> {
    if index.metadata().embedding_model != embedder.model_id() {
        return Err(RagError::ModelMismatch {
            index: index.metadata().embedding_model.clone(),
            embedder: embedder.model_id().to_string(),
        });
    }
    Ok(())
}

/// First stage: the `min(2K, |index|)` chunks most cosine-similar to the query.
pub async fn retrieve(
    query: &str,
    k: usize,
    index: &VectorIndex,
    embedder: &dyn Embedder,
) -> Result<Vec<Candidate>, RagError> {
    if k == 0 {
        return Err(RagError::InvalidK);
    }
    if index.is_empty() {
        return Err(RagError::EmptyIndex);
    }
    check_model(index, embedder)?;
    let q = embed_query(embedder, query).await?;
    if q.len() != index.dimension() {
        return Err(RagError::Dimension { at: 0, expected: index.dimension(), found: q.len() });
    }
    Ok(select_top(&[index], &q, 2 * k, None)
        .into_iter()
        .map(|(_, row, score)| Candidate {
            chunk: index.chunk(row).clone(),
            score,
            source: index.namespace().to_string(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankOutcome {
    pub items: Vec<KnowledgeItem>,
    /// The reranker failed and items are in cosine order.
    pub degraded: bool,
}

fn to_item(c: &Candidate, rerank_score: f64, rank: usize) -> KnowledgeItem {
    KnowledgeItem {
        chunk_id: c.chunk.chunk_id.clone(),
        text: c.chunk.text.clone(),
        book_title: c.chunk.book_title.clone(),
        page: c.chunk.page,
        language: c.chunk.language,
        source: c.source.clone(),
        retrieval_score: c.score,
        rerank_score,
        rank,
    }
}

/// Second stage: top `K` by rerank score, ties by cosine then chunk id. If
/// the reranker fails, falls back to cosine order and flags the result.
pub async fn rerank(
    query: &str,
    candidates: &[Candidate],
    k: usize,
    reranker: &dyn Reranker,
) -> Result<RerankOutcome, RagError> {
    if k == 0 {
        return Err(RagError::InvalidK);
    }
    if candidates.is_empty() {
        return Ok(RerankOutcome { items: Vec::new(), degraded: false });
    }
    let docs: Vec<String> = candidates.iter().map(|c| c.chunk.text.clone()).collect();
    let scores = match reranker.rerank_score(query, &docs).await {
        Ok(s) if s.len() == docs.len() && s.iter().all(|x| x.is_finite()) => Some(s),
        Ok(s) => {
            tracing::warn!(
                "reranker returned {} unusable scores for {} documents; using cosine order",
                s.len(),
                docs.len()
            );
            None
        }
        Err(e) => {
            tracing::warn!("reranker unavailable, using cosine order: {e}");
            None
        }
    };
    let degraded = scores.is_none();
    let scores = scores.unwrap_or_else(|| candidates.iter().map(|c| c.score).collect());
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| candidates[b].score.total_cmp(&candidates[a].score))
            .then_with(|| candidates[a].chunk.chunk_id.cmp(&candidates[b].chunk.chunk_id))
    });
    let items = order.into_iter().take(k).enumerate().map(|(r, i)| to_item(&candidates[i], scores[i], r + 1)).collect();
    Ok(RerankOutcome { items, degraded })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeResult {
    pub items: Vec<KnowledgeItem>,
    pub degraded: bool,
    /// Candidates were drawn from every language.
    pub cross_language: bool,
    pub candidate_count: usize,
}

/// The main corpus index plus any private indexes, queried as one union.
/// Index changes swap in a new snapshot; running queries keep the old one.
pub struct KnowledgeBase {
    embedder: Arc<dyn Embedder>,
    reranker: Arc<dyn Reranker>,
    routing: LanguageRouting,
    indexes: RwLock<Arc<Vec<Arc<VectorIndex>>>>,
}

impl std::fmt::Debug for KnowledgeBase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KnowledgeBase").field("routing", &self.routing).field("chunks", &self.total_chunks()).finish()
    }
}

impl KnowledgeBase {
    pub fn new(embedder: Arc<dyn Embedder>, reranker: Arc<dyn Reranker>) -> Self {
        Self { embedder, reranker, routing: LanguageRouting::default(), indexes: RwLock::new(Arc::new(Vec::new())) }
    }

    pub fn with_routing(mut self, routing: LanguageRouting) -> Self {
        self.routing = routing;
        self
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    fn snapshot(&self) -> Arc<Vec<Arc<VectorIndex>>> {
        self.indexes.read().expect("knowledge base lock poisoned").clone()
    }

    /// Adds an index, replacing any index with the same namespace.
    pub fn install(&self, index: VectorIndex) -> Result<(), RagError> {
        check_model(&index, self.embedder.as_ref())?;
        let mut guard = self.indexes.write().expect("knowledge base lock poisoned");
        if let Some(other) = guard.iter().find(|i| i.namespace() != index.namespace()) {
            if other.dimension() != index.dimension() {
                return Err(RagError::Dimension { at: 0, expected: other.dimension(), found: index.dimension() });
            }
        }
        let mut next: Vec<Arc<VectorIndex>> =
            guard.iter().filter(|i| i.namespace() != index.namespace()).cloned().collect();
        next.push(Arc::new(index));
        next.sort_by(|a, b| a.namespace().cmp(b.namespace()));
        *guard = Arc::new(next);
        Ok(())
    }

    pub fn remove(&self, namespace: &str) -> bool {
        let mut guard = self.indexes.write().expect("knowledge base lock poisoned");
        let before = guard.len();
        let next: Vec<_> = guard.iter().filter(|i| i.namespace() != namespace).cloned().collect();
        let removed = next.len() != before;
        *guard = Arc::new(next);
        removed
    }

    pub fn namespaces(&self) -> Vec<String> {
        self.snapshot().iter().map(|i| i.namespace().to_string()).collect()
    }

    pub fn total_chunks(&self) -> usize {
        self.snapshot().iter().map(|i| i.len()).sum()
    }

    /// Candidates from the union of all indexes. `language` defaults to the
    /// query's detected language for routing.
    pub async fn candidates(
        &self,
        query: &str,
        k: usize,
        language: Option<Language>,
    ) -> Result<(Vec<Candidate>, bool), RagError> {
        if k == 0 {
            return Err(RagError::InvalidK);
        }
        let snapshot = self.snapshot();
        if snapshot.iter().all(|i| i.is_empty()) {
            return Err(RagError::EmptyIndex);
        }
        let q = embed_query(self.embedder.as_ref(), query).await?;
        if let Some(bad) = snapshot.iter().find(|i| i.dimension() != q.len()) {
            return Err(RagError::Dimension { at: 0, expected: bad.dimension(), found: q.len() });
        }
        let lang = language.unwrap_or_else(|| detect_language(query));
        let filter = match self.routing {
            LanguageRouting::CrossLanguage => None,
            LanguageRouting::PreferQueryLanguage => {
                let available: usize = snapshot.iter().map(|i| i.count_language(lang)).sum();
                (lang != Language::Other && available > 0).then_some(lang)
            }
        };
        let refs: Vec<&VectorIndex> = snapshot.iter().map(|i| i.as_ref()).collect();
        let hits = select_top(&refs, &q, 2 * k, filter)
            .into_iter()
            .map(|(slot, row, score)| Candidate {
                chunk: refs[slot].chunk(row).clone(),
                score,
                source: refs[slot].namespace().to_string(),
            })
            .collect();
        Ok((hits, filter.is_none()))
    }

    /// Retrieve 2K candidates, rerank to K.
    pub async fn query_knowledge(
        &self,
        query: &str,
        k: usize,
        language: Option<Language>,
    ) -> Result<KnowledgeResult, RagError> {
        let (candidates, cross_language) = self.candidates(query, k, language).await?;
        let outcome = rerank(query, &candidates, k, self.reranker.as_ref()).await?;
        Ok(KnowledgeResult {
            items: outcome.items,
            degraded: outcome.degraded,
            cross_language,
            candidate_count: candidates.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::GatewayError;
    use crate::rag::IndexMetadata;
    use async_trait::async_trait;

    struct FixedEmbedder(Vec<f32>);

    #[async_trait]
    impl Embedder for FixedEmbedder {
        fn model_id(&self) -> &str {
            "fixed"
        }
        async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
            Ok(texts.iter().map(|_| self.0.clone()).collect())
        }
    }

    struct Scripted(Result<Vec<f64>, ()>);

    #[async_trait]
    impl Reranker for Scripted {
        async fn rerank_score(&self, _q: &str, _d: &[String]) -> Result<Vec<f64>, GatewayError> {
            self.0.clone().map_err(|_| GatewayError::Config("down".into()))
        }
    }

    fn chunk(id: &str, v: Vec<f32>, lang: Language) -> KnowledgeChunk {
        KnowledgeChunk {
            chunk_id: id.into(),
            text: format!("text {id}"),
            book_title: "Oral Pathology".into(),
            page: 1,
            language: lang,
            token_count: 2,
            embedding: normalize(&v).unwrap(),
        }
    }

    fn index(chunks: Vec<KnowledgeChunk>) -> VectorIndex {
        let dimension = chunks[0].embedding.len();
        let metadata = IndexMetadata {
            namespace: "main".into(),
            dimension,
            embedding_model: "fixed".into(),
            created_at: chrono::Utc::now(),
            count: chunks.len(),
        };
        VectorIndex::from_parts(metadata, chunks).unwrap()
    }

    #[tokio::test]
    async fn analytic_cosines() {
        let idx = index(vec![
            chunk("chunk1", vec![1.0, 0.0], Language::En),
            chunk("chunk2", vec![0.0, 1.0], Language::En),
            chunk("chunk3", vec![0.6, 0.8], Language::En),
        ]);
        let got = retrieve("q", 1, &idx, &FixedEmbedder(vec![1.0, 0.0])).await.unwrap();
        assert_eq!(got.iter().map(|c| c.chunk.chunk_id.as_str()).collect::<Vec<_>>(), vec!["chunk1", "chunk3"]);
        assert!((got[0].score - 1.0).abs() < 1e-9);
        assert!((got[1].score - 0.6).abs() < 1e-6);
    }

    #[tokio::test]
    async fn ties_break_by_chunk_id_and_small_index_returns_all() {
        let idx = index(vec![
            chunk("b", vec![1.0, 0.0], Language::En),
            chunk("a", vec![1.0, 0.0], Language::En),
            chunk("c", vec![0.0, 1.0], Language::En),
        ]);
        let got = retrieve("q", 7, &idx, &FixedEmbedder(vec![1.0, 0.0])).await.unwrap();
        assert_eq!(got.iter().map(|c| c.chunk.chunk_id.as_str()).collect::<Vec<_>>(), vec!["a", "b", "c"]);
    }

    #[tokio::test]
    async fn rerank_reorders_and_falls_back() {
        let idx = index(vec![
            chunk("c1", vec![1.0, 0.0], Language::En),
            chunk("c2", vec![0.9, 0.1], Language::En),
            chunk("c3", vec![0.7, 0.3], Language::En),
            chunk("c4", vec![0.5, 0.5], Language::En),
        ]);
        let cands = retrieve("q", 2, &idx, &FixedEmbedder(vec![1.0, 0.0])).await.unwrap();
        assert_eq!(cands.len(), 4);
        let out = rerank("q", &cands, 2, &Scripted(Ok(vec![0.1, 0.2, 0.3, 0.4]))).await.unwrap();
        assert!(!out.degraded);
        assert_eq!(out.items.iter().map(|i| i.chunk_id()).collect::<Vec<_>>(), vec!["c4", "c3"]);
        assert_eq!(out.items.iter().map(|i| i.rank()).collect::<Vec<_>>(), vec![1, 2]);

        let out = rerank("q", &cands, 2, &Scripted(Err(()))).await.unwrap();
        assert!(out.degraded);
        assert_eq!(out.items.iter().map(|i| i.chunk_id()).collect::<Vec<_>>(), vec!["c1", "c2"]);
    }

    #[tokio::test]
    async fn language_routing_prefers_query_language() {
        let kb = KnowledgeBase::new(Arc::new(FixedEmbedder(vec![1.0, 0.0])), Arc::new(Scripted(Err(()))));
        kb.install(index(vec![chunk("en1", vec![1.0, 0.0], Language::En), chunk("zh1", vec![0.5, 0.5], Language::Zh)]))
            .unwrap();
        let r = kb.query_knowledge("龋齿是什么", 1, None).await.unwrap();
        assert_eq!(r.items.iter().map(|i| i.chunk_id()).collect::<Vec<_>>(), vec!["zh1"]);
        assert!(!r.cross_language);
        let r = kb.query_knowledge("what is caries", 1, None).await.unwrap();
        assert_eq!(r.candidate_count, 1);
        assert_eq!(r.items[0].chunk_id(), "en1");
    }

    #[test]
    fn items_without_provenance_cannot_be_built() {
        let raw = RawKnowledgeItem {
            chunk_id: "x".into(),
            text: "t".into(),
            book_title: " ".into(),
            page: Some(3),
            language: Language::En,
            source: "main".into(),
            retrieval_score: 0.5,
            rerank_score: 0.5,
            rank: 1,
        };
        assert!(KnowledgeItem::try_from(raw.clone()).is_err());
        let json = serde_json::json!({"chunk_id": "x", "text": "t", "book_title": "B", "language": "en",
            "retrieval_score": 0.1, "rerank_score": 0.2, "rank": 1});
        assert!(serde_json::from_value::<KnowledgeItem>(json).is_err());
        let ok = KnowledgeItem::try_from(RawKnowledgeItem { book_title: "B".into(), ..raw }).unwrap();
        let back: KnowledgeItem = serde_json::from_value(serde_json::to_value(&ok).unwrap()).unwrap();
        assert_eq!(back, ok);
    }
}

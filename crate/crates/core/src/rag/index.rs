use std::collections::HashSet;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Paragraph, RagError};
use crate::gateway::Embedder;
use crate::text::{count_tokens, split_sentences, truncate_to_tokens, Language};

pub const CHUNKS_FILE: &str = "chunks.jsonl";
pub const METADATA_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkingConfig {
    pub max_tokens: usize,
    pub batch_size: usize,
    /// Mixed into chunk ids so separately built indexes never collide.
    pub namespace: String,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self { max_tokens: 512, batch_size: 32, namespace: "main".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeChunk {
    pub chunk_id: String,
    pub text: String,
    pub book_title: String,
    pub page: u32,
    pub language: Language,
    pub token_count: usize,
    /// Unit L2 norm.
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexMetadata {
    pub namespace: String,
    pub dimension: usize,
    pub embedding_model: String,
    pub created_at: DateTime<Utc>,
    pub count: usize,
}

/// Chunks plus a row-major copy of their embeddings for scanning.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    metadata: IndexMetadata,
    chunks: Vec<KnowledgeChunk>,
    matrix: Vec<f32>,
    /// Chunk counts for en, zh, other.
    language_counts: [usize; 3],
}

impl PartialEq for VectorIndex {
    fn eq(&self, other: &Self) -> bool {
        self.metadata == other.metadata && self.chunks == other.chunks
    }
}

/// Splits a paragraph into pieces of at most `max_tokens`, packing whole
/// sentences greedily. A single sentence over the limit is cut by tokens.
pub fn chunk_paragraph(text: &str, max_tokens: usize) -> Vec<String> {
    let max_tokens = max_tokens.max(1);
    let text = text.trim();
    if count_tokens(text) <= max_tokens {
        return if text.is_empty() { Vec::new() } else { vec![text.to_string()] };
    }
    let base = text.as_ptr() as usize;
    let offset = |s: &str| s.as_ptr() as usize - base;
    let mut pieces: Vec<&str> = Vec::new();
    for sentence in split_sentences(text) {
        let mut rest = sentence;
        while count_tokens(rest) > max_tokens {
            let head = truncate_to_tokens(rest, max_tokens);
            pieces.push(head);
            rest = rest[head.len()..].trim_start();
        }
        if !rest.is_empty() {
            pieces.push(rest);
        }
    }
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut end = 0usize;
    let mut tokens = 0usize;
    for piece in pieces {
        let n = count_tokens(piece);
        if let Some(s) = start {
            if tokens + n <= max_tokens {
                end = offset(piece) + piece.len();
                tokens += n;
                continue;
            }
            out.push(text[s..end].to_string());
        }
        start = Some(offset(piece));
        end = offset(piece) + piece.len();
        tokens = n;
    }
    if let Some(s) = start {
        out.push(text[s..end].to_string());
    }
    out
}

fn chunk_id(namespace: &str, book: &str, page: u32, ordinal: usize, text: &str) -> String {
    let mut h = Sha256::new();
    for part in [namespace, book, &page.to_string(), &ordinal.to_string(), text] {
        h.update(part.as_bytes());
        h.update([0u8]);
    }
    hex::encode(&h.finalize()[..8])
}

fn language_slot(lang: Language) -> usize {
    match lang {
        Language::En => 0,
        Language::Zh => 1,
        Language::Other => 2,
    }
}

/// L2-normalizes in double precision. Fails on a zero vector.
pub(crate) fn normalize(v: &[f32]) -> Option<Vec<f32>> {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return None;
    }
    Some(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

/// Chunks, embeds in batches and normalizes `paragraphs` into a fresh index.
pub async fn build_index(
    paragraphs: &[Paragraph],
    config: &ChunkingConfig,
    embedder: &dyn Embedder,
) -> Result<VectorIndex, RagError> {
    let mut pending = Vec::new();
    for par in paragraphs {
        for text in chunk_paragraph(&par.text, config.max_tokens) {
            pending.push((par, text));
        }
    }
    if pending.is_empty() {
        return Err(RagError::EmptyInput);
    }
    let mut chunks = Vec::with_capacity(pending.len());
    let mut dimension = None;
    for batch in pending.chunks(config.batch_size.max(1)) {
        let texts: Vec<String> = batch.iter().map(|(_, t)| t.clone()).collect();
        let vectors = embedder.embed(&texts).await?;
        if vectors.len() != texts.len() {
            return Err(RagError::BatchSize { expected: texts.len(), found: vectors.len() });
        }
        for ((par, text), v) in batch.iter().zip(vectors) {
            let at = chunks.len();
            let expected = *dimension.get_or_insert(v.len());
            if v.len() != expected || expected == 0 {
                return Err(RagError::Dimension { at, expected, found: v.len() });
            }
            let embedding = normalize(&v).ok_or(RagError::ZeroVector(at))?;
            chunks.push(KnowledgeChunk {
                chunk_id: chunk_id(&config.namespace, &par.book_title, par.page, at, text),
                token_count: count_tokens(text),
                text: text.clone(),
                book_title: par.book_title.clone(),
                page: par.page,
                language: par.language,
                embedding,
            });
        }
    }
    let metadata = IndexMetadata {
        namespace: config.namespace.clone(),
        dimension: dimension.unwrap_or(0),
        embedding_model: embedder.model_id().to_string(),
        created_at: Utc::now(),
        count: chunks.len(),
    };
    VectorIndex::from_parts(metadata, chunks)
}

impl VectorIndex {
    /// Checks every invariant: count, uniform dimension, unit norm, non-empty
    /// provenance, unique ids.
    pub fn from_parts(metadata: IndexMetadata, chunks: Vec<KnowledgeChunk>) -> Result<Self, RagError> {
        let corrupt =
            |line: Option<usize>, reason: String| RagError::Corrupt { file: CHUNKS_FILE.into(), line, reason };
        if metadata.count != chunks.len() {
            return Err(RagError::Corrupt {
                file: METADATA_FILE.into(),
                line: None,
                reason: format!("count {} but {} chunks", metadata.count, chunks.len()),
            });
        }
        let mut ids = HashSet::with_capacity(chunks.len());
        let mut language_counts = [0usize; 3];
        let mut matrix = Vec::with_capacity(chunks.len() * metadata.dimension);
        for (i, c) in chunks.iter().enumerate() {
            let line = Some(i + 1);
            if c.embedding.len() != metadata.dimension {
                return Err(RagError::Dimension { at: i, expected: metadata.dimension, found: c.embedding.len() });
            }
            let norm = c.embedding.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(corrupt(line, format!("embedding norm {norm}")));
            }
            if c.book_title.trim().is_empty() {
                return Err(corrupt(line, "empty book_title".into()));
            }
            if c.token_count == 0 || c.text.trim().is_empty() {
                return Err(corrupt(line, "empty text".into()));
            }
            if !ids.insert(c.chunk_id.as_str()) {
                return Err(corrupt(line, format!("duplicate chunk_id {}", c.chunk_id)));
            }
            matrix.extend_from_slice(&c.embedding);
            language_counts[language_slot(c.language)] += 1;
        }
        Ok(Self { metadata, chunks, matrix, language_counts })
    }

    pub fn metadata(&self) -> &IndexMetadata {
        &self.metadata
    }

    pub fn namespace(&self) -> &str {
        &self.metadata.namespace
    }

    pub fn dimension(&self) -> usize {
        self.metadata.dimension
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn count_language(&self, lang: Language) -> usize {
        self.language_counts[language_slot(lang)]
    }

    pub fn chunks(&self) -> &[KnowledgeChunk] {
        &self.chunks
    }

    pub fn chunk(&self, i: usize) -> &KnowledgeChunk {
        &self.chunks[i]
    }

    pub(crate) fn row(&self, i: usize) -> &[f32] {
        let d = self.metadata.dimension;
        &self.matrix[i * d..(i + 1) * d]
    }

    /// Writes `chunks.jsonl` and `index.json` into `dir`, each through a temp file and rename.
    pub fn save(&self, dir: &Path) -> Result<(), RagError> {
        std::fs::create_dir_all(dir)?;
        let tmp = dir.join(format!("{CHUNKS_FILE}.tmp"));
        {
            let mut w = BufWriter::new(std::fs::File::create(&tmp)?);
            for c in &self.chunks {
                serde_json::to_writer(&mut w, c).map_err(std::io::Error::other)?;
                w.write_all(b"\n")?;
            }
            w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        std::fs::rename(&tmp, dir.join(CHUNKS_FILE))?;
        let tmp = dir.join(format!("{METADATA_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_vec_pretty(&self.metadata).map_err(std::io::Error::other)?)?;
        std::fs::rename(&tmp, dir.join(METADATA_FILE))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, RagError> {
        let meta_bytes = std::fs::read(dir.join(METADATA_FILE))?;
        let metadata: IndexMetadata = serde_json::from_slice(&meta_bytes).map_err(|e| RagError::Corrupt {
            file: METADATA_FILE.into(),
            line: None,
            reason: e.to_string(),
        })?;
        let file = std::fs::File::open(dir.join(CHUNKS_FILE))?;
        let mut chunks = Vec::with_capacity(metadata.count);
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line_text = line?;
            if line_text.trim().is_empty() {
                continue;
            }
            let chunk: KnowledgeChunk = serde_json::from_str(&line_text).map_err(|e| RagError::Corrupt {
                file: CHUNKS_FILE.into(),
                line: Some(i + 1),
                reason: e.to_string(),
            })?;
            chunks.push(chunk);
        }
        Self::from_parts(metadata, chunks)
    }
}

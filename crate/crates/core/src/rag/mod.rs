//! Corpus ingestion with page provenance, exact cosine retrieval of 2K
//! candidates, and reranking down to K cited knowledge items.

mod index;
mod ingest;
mod private;
mod retrieve;
mod tool;

use serde::{Deserialize, Serialize};

use crate::gateway::GatewayError;
use crate::text::Language;

pub use index::{
    build_index, chunk_paragraph, ChunkingConfig, IndexMetadata, KnowledgeChunk, VectorIndex, CHUNKS_FILE,
    METADATA_FILE,
};
pub use ingest::{
    clean_documents, clean_paragraph, ingest_documents, postprocess_parsed, strip_references, Block, BlockKind,
    CleanMode, CleanedParagraph, IngestReport, Paragraph, ParsedDocument,
};
pub use private::{ingest_private_kb, PrivateKbOptions};
pub use retrieve::{
    rerank, retrieve, select_top, Candidate, Citation, KnowledgeBase, KnowledgeItem, KnowledgeResult, RawKnowledgeItem,
    RerankOutcome,
};
pub use tool::{knowledge_search_descriptor, KnowledgeSearchTool, KNOWLEDGE_SEARCH_TOOL};

/// Default number of knowledge items returned per query.
pub const DEFAULT_K: usize = 7;

#[derive(Debug, thiserror::Error)]
pub enum RagError {
    #[error("nothing to index")]
    EmptyInput,
    #[error("index is empty")]
    EmptyIndex,
    #[error("K must be at least 1")]
    InvalidK,
    #[error("embedding dimension mismatch at chunk {at}: expected {expected}, found {found}")]
    Dimension { at: usize, expected: usize, found: usize },
    #[error("embedding for chunk {0} has zero norm")]
    ZeroVector(usize),
    #[error("embedder returned {found} vectors for {expected} inputs")]
    BatchSize { expected: usize, found: usize },
    #[error("index built with {index} cannot be queried with {embedder}")]
    ModelMismatch { index: String, embedder: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("cleaning failed: {0}")]
    Clean(String),
    #[error("invalid document: {0}")]
    InvalidDocument(String),
    #[error("knowledge item lacks provenance: {0}")]
    MissingProvenance(String),
    #[error("corrupt index file {file}{}: {reason}", .line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Corrupt { file: String, line: Option<usize>, reason: String },
    #[error("unsupported file extension {0:?}")]
    Unsupported(String),
    #[error("no parser command configured for .{0} files")]
    ParserNotConfigured(String),
    #[error("parser command failed: {0}")]
    ParserFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Corpus languages; anything else is filed under English.
pub fn corpus_language(lang: Language) -> Language {
    match lang {
        Language::Zh => Language::Zh,
        _ => Language::En,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LanguageRouting {
    /// Search chunks in the query's language, or everything if there are none.
    #[default]
    PreferQueryLanguage,
    /// Search every chunk regardless of language.
    CrossLanguage,
}

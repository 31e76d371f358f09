use std::path::{Path, PathBuf};

use super::{
    corpus_language, ingest_documents, Block, BlockKind, ChunkingConfig, CleanMode, ParsedDocument, RagError,
    VectorIndex,
};
use crate::gateway::Embedder;
use crate::text::detect_language;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrivateKbOptions {
    /// Namespace of the resulting index.
    pub namespace: String,
    /// Program that turns a .doc/.pdf file (its last argument) into
    /// `ParsedDocument` JSON on stdout. Split on whitespace.
    pub parser_command: Option<String>,
    pub max_tokens: Option<usize>,
}

/// Native reading of plain text and markdown: blank-line separated
/// paragraphs, each on its own synthetic page numbered from 1. Markdown
/// headings become title blocks.
fn parse_plain(path: &Path, text: &str) -> ParsedDocument {
    let book_title = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let language = corpus_language(detect_language(text));
    let mut blocks = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let flush = |lines: &mut Vec<&str>, blocks: &mut Vec<Block>| {
        if lines.is_empty() {
            return;
        }
        let joined = lines
            .iter()
            .map(|l| l.trim())
            .collect::<Vec<_>>()
            .join(if language == crate::text::Language::Zh { "" } else { " " });
        let page = blocks.len() as u32 + 1;
        let kind = if joined.starts_with('#') { BlockKind::Title } else { BlockKind::Paragraph };
        blocks.push(Block { kind, text: joined, page: Some(page) });
        lines.clear();
    };
    for line in text.lines() {
        if line.trim().is_empty() {
            flush(&mut current, &mut blocks);
        } else if line.trim_start().starts_with('#') {
            flush(&mut current, &mut blocks);
            current.push(line);
            flush(&mut current, &mut blocks);
        } else {
            current.push(line);
        }
    }
    flush(&mut current, &mut blocks);
    ParsedDocument { book_title, language, blocks }
}

fn run_parser(command: &str, path: &Path) -> Result<ParsedDocument, RagError> {
    let mut parts = command.split_whitespace();
    let program = parts.next().ok_or_else(|| RagError::ParserFailed("empty parser command".into()))?;
    let output = std::process::Command::new(program)
        .args(parts)
        .arg(path)
        .output()
        .map_err(|e| RagError::ParserFailed(format!("{program}: {e}")))?;
    if !output.status.success() {
        let stderr = String::from_utf8_lossy(&output.stderr);
        return Err(RagError::ParserFailed(format!("{program} exited with {}: {}", output.status, stderr.trim())));
    }
    serde_json::from_slice(&output.stdout)
        .map_err(|e| RagError::ParserFailed(format!("{program} printed invalid JSON: {e}")))
}

fn read_document(path: &Path, options: &PrivateKbOptions) -> Result<ParsedDocument, RagError> {
    let ext = path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase()).unwrap_or_default();
    match ext.as_str() {
        "txt" | "md" => Ok(parse_plain(path, &std::fs::read_to_string(path)?)),
        "doc" | "pdf" => match &options.parser_command {
            Some(cmd) => run_parser(cmd, path),
            None => Err(RagError::ParserNotConfigured(ext)),
        },
        _ => Err(RagError::Unsupported(ext)),
    }
}

fn collect_files(path: &Path) -> Result<Vec<PathBuf>, RagError> {
    if path.is_dir() {
        let mut files = Vec::new();
        for entry in std::fs::read_dir(path)? {
            let p = entry?.path();
            if p.is_file() {
                files.push(p);
            }
        }
        files.sort();
        Ok(files)
    } else if path.exists() {
        Ok(vec![path.to_path_buf()])
    } else {
        Err(RagError::Io(std::io::Error::new(std::io::ErrorKind::NotFound, path.display().to_string())))
    }
}

/// Builds a private index from a file or a directory of .txt/.md/.doc/.pdf
/// files. Cleaning is rule-based only; private text never leaves the machine.
pub async fn ingest_private_kb(
    path: &Path,
    options: &PrivateKbOptions,
    embedder: &dyn Embedder,
) -> Result<VectorIndex, RagError> {
    let mut docs = Vec::new();
    for file in collect_files(path)? {
        docs.push(read_document(&file, options)?);
    }
    let namespace = if options.namespace.is_empty() { "private".to_string() } else { options.namespace.clone() };
    let mut chunking = ChunkingConfig { namespace, ..ChunkingConfig::default() };
    if let Some(m) = options.max_tokens {
        chunking.max_tokens = m;
    }
    let (index, _report) = ingest_documents(&docs, CleanMode::DryRun, &chunking, embedder).await?;
    Ok(index)
}

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{build_index, corpus_language, ChunkingConfig, RagError, VectorIndex};
use crate::gateway::{ChatMessage, ChatModel, Embedder};
use crate::text::{ends_with_terminal, Language};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Title,
    Paragraph,
    Table,
    Header,
    Footer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub text: String,
    #[serde(default)]
    pub page: Option<u32>,
}

/// Output of the external layout parser for one book.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedDocument {
    pub book_title: String,
    pub language: Language,
    pub blocks: Vec<Block>,
}

impl ParsedDocument {
    pub fn validate(&self) -> Result<(), RagError> {
        if self.book_title.trim().is_empty() {
            return Err(RagError::InvalidDocument("book_title is empty".into()));
        }
        if self.language == Language::Other {
            return Err(RagError::InvalidDocument("language must be en or zh".into()));
        }
        let mut last: Option<(usize, u32)> = None;
        for (i, b) in self.blocks.iter().enumerate() {
            if let Some(p) = b.page {
                if let Some((j, prev)) = last {
                    if p < prev {
                        return Err(RagError::InvalidDocument(format!(
                            "page numbers decrease: block {j} on page {prev}, block {i} on page {p}"
                        )));
                    }
                }
                last = Some((i, p));
            }
        }
        Ok(())
    }
}

/// A content paragraph with its page of origin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub text: String,
    pub page: u32,
    pub book_title: String,
    pub language: Language,
}

fn joiner(lang: Language) -> &'static str {
    if lang == Language::Zh {
        ""
    } else {
        " "
    }
}

/// Drops titles, headers, footers and anything on an unnumbered page, then
/// rejoins paragraphs that a page or column break split mid-sentence. A
/// merged paragraph keeps the page of its first fragment. Tables pass through
/// as their own paragraphs and never absorb or continue a fragment.
pub fn postprocess_parsed(doc: &ParsedDocument) -> Vec<Paragraph> {
    let mut out: Vec<Paragraph> = Vec::new();
    let mut open = false;
    for block in &doc.blocks {
        let Some(page) = block.page else { continue };
        let text = block.text.trim();
        match block.kind {
            BlockKind::Title | BlockKind::Header | BlockKind::Footer => continue,
            _ if text.is_empty() => continue,
            BlockKind::Table => {
                out.push(Paragraph {
                    text: text.to_string(),
                    page,
                    book_title: doc.book_title.clone(),
                    language: doc.language,
                });
                open = false;
            }
            BlockKind::Paragraph => {
                match out.last_mut() {
                    Some(prev) if open => {
                        prev.text.push_str(joiner(doc.language));
                        prev.text.push_str(text);
                    }
                    _ => out.push(Paragraph {
                        text: text.to_string(),
                        page,
                        book_title: doc.book_title.clone(),
                        language: doc.language,
                    }),
                }
                open = !ends_with_terminal(&out.last().expect("just pushed").text);
            }
        }
    }
    out
}

fn reference_patterns() -> &'static [(Regex, &'static str)] {
    static PATTERNS: OnceLock<Vec<(Regex, &'static str)>> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        let num = r"[0-9]+[A-Za-z]?(?:[-–.][0-9]+[A-Za-z]?)*";
        let target = format!(r"(?:fig(?:ure)?s?\.?|tables?|tab\.)\s*{num}(?:\s*(?:,|and|&|to|–|-)\s*{num})*");
        let zh_num = r"[0-9]+(?:[-–.][0-9]+)*";
        [
            // (see Figure 3-2), (Fig. 4), (Tables 1 and 2)
            (format!(r"(?i)\s*[(\[]\s*(?:see\s+|cf\.\s+)?{target}\s*[)\]]"), ""),
            // as shown in Figure 3-2 / illustrated in Table 4
            (
                format!(r"(?i),?\s*as\s+(?:is\s+|are\s+)?(?:shown|illustrated|seen|depicted|listed|summarized|presented|demonstrated)\s+in\s+{target}"),
                "",
            ),
            // see Figure 2
            (format!(r"(?i),?\s*\bsee\s+{target}"), ""),
            // 如图3-2所示 / 见表1
            (format!(r"[（(]?(?:如|见|参见|详见)[图表]\s*{zh_num}(?:所示)?[）)]?"), ""),
            // （图3-2）
            (format!(r"[（(][图表]\s*{zh_num}[）)]"), ""),
            (r"[ \t]{2,}".to_string(), " "),
            (r"\s+([.,;:!?])".to_string(), "$1"),
            (r"^[，,]\s*|([。！？；])[，,]".to_string(), "$1"),
        ]
        .into_iter()
        .map(|(p, r)| (Regex::new(&p).expect("reference pattern compiles"), r))
        .collect()
    })
}

/// Removes figure and table references (`as shown in Figure 3-2`,
/// `(see Table 1)`, `如图3-2所示`) and tidies the whitespace they leave.
pub fn strip_references(text: &str) -> String {
    let mut s = text.to_string();
    for (re, rep) in reference_patterns() {
        s = re.replace_all(&s, *rep).into_owned();
    }
    s.trim().to_string()
}

#[derive(Clone, Copy)]
pub enum CleanMode<'a> {
    /// Rule-based reference stripping only; every paragraph is kept.
    DryRun,
    /// Model judges relevance, strips noise and optionally translates.
    Model {
        model: &'a dyn ChatModel,
        /// Gateway or parse failure aborts ingestion instead of keeping the raw text.
        strict: bool,
        translate: bool,
    },
}

impl std::fmt::Debug for CleanMode<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CleanMode::DryRun => f.write_str("DryRun"),
            CleanMode::Model { strict, translate, .. } => {
                f.debug_struct("Model").field("strict", strict).field("translate", translate).finish()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanedParagraph {
    pub keep: bool,
    pub cleaned_text: String,
    #[serde(default)]
    pub translated_text: Option<String>,
    /// (source, target) when a translation is present.
    #[serde(default)]
    pub translation: Option<(Language, Language)>,
    #[serde(default)]
    pub warning: Option<String>,
}

fn other_language(lang: Language) -> Language {
    if lang == Language::Zh {
        Language::En
    } else {
        Language::Zh
    }
}

fn cleaning_prompt(par: &Paragraph, translate: bool) -> String {
    let target = other_language(par.language);
    let mut p = String::from(
        "You curate a dental knowledge corpus. For the paragraph below decide whether it is dental or oral-medicine \
         knowledge worth keeping (drop copyright notices, prefaces, acknowledgements, indexes and other non-content). \
         Remove figure and table references and other layout noise without changing the meaning.\n",
    );
    if translate {
        p.push_str(&format!(
            "Also translate the cleaned paragraph into {}.\n",
            if target == Language::Zh { "Chinese" } else { "English" }
        ));
    }
    p.push_str(
        "Reply with one JSON object only: {\"keep\": true|false, \"cleaned_text\": \"...\", \"translated_text\": \"...\" or null}\n\nParagraph:\n",
    );
    p.push_str(&par.text);
    p
}

#[derive(Deserialize)]
struct ModelVerdict {
    keep: bool,
    #[serde(default)]
    cleaned_text: Option<String>,
    #[serde(default)]
    translated_text: Option<String>,
}

fn parse_verdict(text: &str) -> Option<ModelVerdict> {
    let t = text.trim();
    let start = t.find('{')?;
    let end = t.rfind('}')?;
    serde_json::from_str(&t[start..=end]).ok()
}

/// Cleans one paragraph. In lenient model mode a failed call keeps the raw
/// text and records a warning.
pub async fn clean_paragraph(par: &Paragraph, mode: CleanMode<'_>) -> Result<CleanedParagraph, RagError> {
    let (model, strict, translate) = match mode {
        CleanMode::DryRun => {
            return Ok(CleanedParagraph {
                keep: true,
                cleaned_text: strip_references(&par.text),
                translated_text: None,
                translation: None,
                warning: None,
            })
        }
        CleanMode::Model { model, strict, translate } => (model, strict, translate),
    };
    let failure = |reason: String| {
        if strict {
            Err(RagError::Clean(reason))
        } else {
            tracing::warn!("keeping raw paragraph: {reason}");
            Ok(CleanedParagraph {
                keep: true,
                cleaned_text: par.text.trim().to_string(),
                translated_text: None,
                translation: None,
                warning: Some(reason),
            })
        }
    };
    let messages = [ChatMessage::user(cleaning_prompt(par, translate))];
    let completion = match model.chat(&messages, &[]).await {
        Ok(c) => c,
        Err(e) => return failure(format!("{} p.{}: {e}", par.book_title, par.page)),
    };
    let Some(verdict) = completion.text.as_deref().and_then(parse_verdict) else {
        return failure(format!("{} p.{}: unparseable cleaning verdict", par.book_title, par.page));
    };
    let cleaned_text = verdict
        .cleaned_text
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .unwrap_or_else(|| par.text.trim().to_string());
    let translated_text =
        if translate { verdict.translated_text.map(|t| t.trim().to_string()).filter(|t| !t.is_empty()) } else { None };
    let translation = translated_text.as_ref().map(|_| (par.language, other_language(par.language)));
    Ok(CleanedParagraph { keep: verdict.keep, cleaned_text, translated_text, translation, warning: None })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub documents: usize,
    pub paragraphs: usize,
    pub dropped: usize,
    pub translated: usize,
    pub warnings: Vec<String>,
}

/// Postprocess and clean a set of parsed books into indexable paragraphs.
/// Translations are added as extra paragraphs with the same provenance.
pub async fn clean_documents(
    docs: &[ParsedDocument],
    mode: CleanMode<'_>,
) -> Result<(Vec<Paragraph>, IngestReport), RagError> {
    let mut report = IngestReport { documents: docs.len(), ..Default::default() };
    let mut paragraphs = Vec::new();
    for doc in docs {
        doc.validate()?;
        for par in postprocess_parsed(doc) {
            report.paragraphs += 1;
            let cleaned = clean_paragraph(&par, mode).await?;
            report.warnings.extend(cleaned.warning.clone());
            if !cleaned.keep || cleaned.cleaned_text.is_empty() {
                report.dropped += 1;
                continue;
            }
            if let (Some(text), Some((_, target))) = (cleaned.translated_text, cleaned.translation) {
                report.translated += 1;
                paragraphs.push(Paragraph { text: cleaned.cleaned_text, ..par.clone() });
                paragraphs.push(Paragraph { text, language: corpus_language(target), ..par });
            } else {
                paragraphs.push(Paragraph { text: cleaned.cleaned_text, ..par });
            }
        }
    }
    Ok((paragraphs, report))
}

/// Postprocess, clean and index a set of parsed books.
pub async fn ingest_documents(
    docs: &[ParsedDocument],
    mode: CleanMode<'_>,
    chunking: &ChunkingConfig,
    embedder: &dyn Embedder,
) -> Result<(VectorIndex, IngestReport), RagError> {
    let (paragraphs, report) = clean_documents(docs, mode).await?;
    let index = build_index(&paragraphs, chunking, embedder).await?;
    Ok((index, report))
}

//! Multiple-choice QA benchmarking with exact option-set scoring, run against
//! either a bare chat model or full agent sessions.

mod answer;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use answer::{extract_answer, ANSWER_INSTRUCTION, ANSWER_REPAIR};

use crate::agent::{AgentRuntime, EventKind, SessionConfig, TraceLog};
use crate::comprehension::{build_structured_instruction, Intent};
use crate::gateway::{ChatMessage, ChatModel};
use crate::memory::MemoryStore;
use crate::registry::ExecutionContext;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MCQItem {
    pub item_id: String,
    pub category: String,
    pub stem: String,
    pub options: BTreeMap<char, String>,
    pub gold: BTreeSet<char>,
}

impl MCQItem {
    pub fn validate(&self) -> Result<(), String> {
        if self.item_id.trim().is_empty() {
            return Err("item_id is empty".into());
        }
        if self.category.trim().is_empty() {
            return Err("category is empty".into());
        }
        if self.options.is_empty() {
            return Err("no options".into());
        }
        if let Some(bad) = self.options.keys().find(|c| !c.is_ascii_uppercase()) {
            return Err(format!("option key {bad:?} is not an uppercase letter"));
        }
        if self.gold.is_empty() {
            return Err("gold set is empty".into());
        }
        if let Some(bad) = self.gold.iter().find(|g| !self.options.contains_key(g)) {
            return Err(format!("gold letter {bad} is not an option"));
        }
        Ok(())
    }

    /// The question as shown to a subject, ending with the answer-format instruction.
    pub fn prompt(&self) -> String {
        let mut out = format!("{}\n", self.stem.trim());
        for (letter, text) in &self.options {
            out.push_str(&format!("{letter}. {}\n", text.trim()));
        }
        out.push('\n');
        out.push_str(ANSWER_INSTRUCTION);
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("benchmark line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("benchmark item {item_id}: {reason}")]
    Invalid { item_id: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parses line-delimited JSON items. Blank lines are skipped; item ids must be unique.
pub fn parse_benchmark(text: &str) -> Result<Vec<MCQItem>, EvalError> {
    let mut items: Vec<MCQItem> = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: MCQItem =
            serde_json::from_str(line).map_err(|e| EvalError::Parse { line: i + 1, message: e.to_string() })?;
        item.validate().map_err(|reason| EvalError::Invalid { item_id: item.item_id.clone(), reason })?;
        if !seen.insert(item.item_id.clone()) {
            return Err(EvalError::Invalid { item_id: item.item_id, reason: "duplicate item_id".into() });
        }
        items.push(item);
    }
    Ok(items)
}

pub fn load_benchmark(path: impl AsRef<Path>) -> Result<Vec<MCQItem>, EvalError> {
    parse_benchmark(&std::fs::read_to_string(path)?)
}

/// Correct only when the predicted set equals the gold set.
pub fn score_item(predicted: &BTreeSet<char>, gold: &BTreeSet<char>) -> bool {
    predicted == gold
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
    /// `correct / total`, or 0 when `total` is 0.
    pub accuracy: f64,
}

impl Tally {
    pub fn new(correct: usize, total: usize) -> Self {
        let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        Self { correct, total, accuracy }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedCall {
    pub tool_name: String,
    pub args: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub item_id: String,
    pub category: String,
    pub prompt: String,
    pub response: String,
    pub predicted: Option<BTreeSet<char>>,
    pub correct: bool,
    /// No letter set could be extracted, even after the repair prompt.
    pub flagged: bool,
    pub repaired: bool,
    pub error: Option<String>,
    /// Agent subjects only.
    pub tool_calls: Option<Vec<RecordedCall>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectKind {
    BareChat,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolUsageStats {
    pub per_tool_counts: BTreeMap<String, usize>,
    pub cases: usize,
    pub total_calls: usize,
    /// `None` when there are no cases.
    pub mean_calls_per_case: Option<f64>,
}

/// Aggregates per-case tool-call name lists.
pub fn tool_usage_stats<S: AsRef<str>>(traces: &[Vec<S>]) -> ToolUsageStats {
    let mut per_tool_counts = BTreeMap::new();
    let mut total_calls = 0;
    for case in traces {
        for name in case {
            *per_tool_counts.entry(name.as_ref().to_string()).or_insert(0) += 1;
            total_calls += 1;
        }
    }
    let cases = traces.len();
    ToolUsageStats {
        per_tool_counts,
        cases,
        total_calls,
        mean_calls_per_case: (cases > 0).then(|| total_calls as f64 / cases as f64),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub subject: SubjectKind,
    pub per_category: BTreeMap<String, Tally>,
    pub overall: Tally,
    /// Sorted by item id so the report does not depend on benchmark order.
    pub items: Vec<ItemOutcome>,
    pub flagged: usize,
    pub tool_usage: Option<ToolUsageStats>,
}

impl EvalReport {
    /// Deterministic fold over item outcomes in any order.
    pub fn from_outcomes(label: impl Into<String>, subject: SubjectKind, mut items: Vec<ItemOutcome>) -> Self {
        items.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for item in &items {
            let entry = counts.entry(item.category.clone()).or_default();
            entry.0 += usize::from(item.correct);
            entry.1 += 1;
        }
        let per_category: BTreeMap<String, Tally> =
            counts.into_iter().map(|(cat, (c, t))| (cat, Tally::new(c, t))).collect();
        let overall = Tally::new(items.iter().filter(|i| i.correct).count(), items.len());
        let tool_usage = (subject == SubjectKind::Agent).then(|| {
            let traces: Vec<Vec<&str>> =
                items.iter().map(|i| i.tool_calls.iter().flatten().map(|c| c.tool_name.as_str()).collect()).collect();
            tool_usage_stats(&traces)
        });
        Self {
            label: label.into(),
            subject,
            per_category,
            overall,
            flagged: items.iter().filter(|i| i.flagged).count(),
            items,
            tool_usage,
        }
    }
}

/// Accuracy table with one row per report and one column per category plus
/// the overall score, in percent.
pub fn render_table(reports: &[EvalReport]) -> String {
    let categories: BTreeSet<&str> = reports.iter().flat_map(|r| r.per_category.keys().map(String::as_str)).collect();
    let mut header = vec!["Model".to_string()];
    header.extend(categories.iter().map(|c| c.to_string()));
    header.push("Overall".into());
    let mut rows = vec![header];
    for r in reports {
        let mut row = vec![r.label.clone()];
        for c in &categories {
            row.push(r.per_category.get(*c).map_or("-".into(), |t| format!("{:.2}", t.accuracy * 100.0)));
        }
        row.push(format!("{:.2}", r.overall.accuracy * 100.0));
        rows.push(row);
    }
    let widths: Vec<usize> =
        (0..rows[0].len()).map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (n, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, w))| if i == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        out.push_str(cells.join(" | ").trim_end());
        out.push('\n');
        if n == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("-|-"));
            out.push('\n');
        }
    }
    out
}

/// An agent to evaluate. Each item runs in its own session with fresh memory.
#[derive(Clone)]
pub struct AgentSubject {
    pub runtime: AgentRuntime,
    pub config: SessionConfig,
    pub ctx: ExecutionContext,
}

#[derive(Clone)]
pub enum Subject {
    BareChat(Arc<dyn ChatModel>),
    Agent(AgentSubject),
}

impl Subject {
    pub fn kind(&self) -> SubjectKind {
        match self {
            Subject::BareChat(_) => SubjectKind::BareChat,
            Subject::Agent(_) => SubjectKind::Agent,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub parallelism: usize,
    pub label: Option<String>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { parallelism: 4, label: None }
    }
}

struct Attempt {
    response: String,
    error: Option<String>,
}

async fn ask_bare(model: &dyn ChatModel, messages: &[ChatMessage]) -> Attempt {
    match model.chat(messages, &[]).await {
        Ok(c) => Attempt { response: c.text.unwrap_or_default(), error: None },
        Err(e) => Attempt { response: String::new(), error: Some(e.to_string()) },
    }
}

async fn ask_agent(subject: &AgentSubject, session: &str, query: &str, trace: &TraceLog) -> Attempt {
    let rt = &subject.runtime;
    let instruction =
        match build_structured_instruction(query, Vec::new(), BTreeSet::from([Intent::Education]), rt.clock.as_ref()) {
            Ok(i) => i,
            Err(e) => return Attempt { response: String::new(), error: Some(e.to_string()) },
        };
    match rt.run_session(session, instruction, &subject.config, &subject.ctx, trace).await {
        Ok(r) => Attempt { response: r.text, error: None },
        Err(e) => Attempt { response: String::new(), error: Some(e.to_string()) },
    }
}

fn recorded_calls(trace: &TraceLog) -> Vec<RecordedCall> {
    trace
        .all()
        .into_iter()
        .filter(|e| e.kind == EventKind::ToolCall)
        .map(|e| RecordedCall {
            tool_name: e.payload.get("tool_name").and_then(Value::as_str).unwrap_or_default().to_string(),
            args: e.payload.get("args").cloned().unwrap_or(Value::Null),
        })
        .collect()
}

fn valid_letters(item: &MCQItem, text: &str) -> Option<BTreeSet<char>> {
    extract_answer(text).filter(|set| set.iter().all(|c| item.options.contains_key(c)))
}

async fn eval_item(subject: &Subject, item: &MCQItem) -> ItemOutcome {
    let prompt = item.prompt();
    let mut tool_calls = None;
    let (first, repair) = match subject {
        Subject::BareChat(model) => {
            let mut messages = vec![ChatMessage::user(prompt.clone())];
            let first = ask_bare(model.as_ref(), &messages).await;
            let repair = if first.error.is_none() && valid_letters(item, &first.response).is_none() {
                messages.push(ChatMessage::assistant(first.response.clone()));
                messages.push(ChatMessage::user(ANSWER_REPAIR));
                Some(ask_bare(model.as_ref(), &messages).await)
            } else {
                None
            };
            (first, repair)
        }
        Subject::Agent(agent) => {
            let mut agent = agent.clone();
            agent.runtime.memory = Arc::new(MemoryStore::in_memory());
            let session = format!("eval-{}", item.item_id);
            let trace = TraceLog::new();
            let first = ask_agent(&agent, &session, &prompt, &trace).await;
            let repair = if first.error.is_none() && valid_letters(item, &first.response).is_none() {
                Some(ask_agent(&agent, &session, ANSWER_REPAIR, &trace).await)
            } else {
                None
            };
            tool_calls = Some(recorded_calls(&trace));
            (first, repair)
        }
    };
    let repaired = repair.is_some();
    let last = repair.unwrap_or(first);
    let predicted = valid_letters(item, &last.response);
    let correct = predicted.as_ref().is_some_and(|p| score_item(p, &item.gold));
    ItemOutcome {
        item_id: item.item_id.clone(),
        category: item.category.clone(),
        prompt,
        response: last.response,
        flagged: predicted.is_none(),
        predicted,
        correct,
        repaired,
        error: last.error,
        tool_calls,
    }
}

/// Evaluates every item, up to `parallelism` at a time. Unextractable answers
/// are scored incorrect and flagged, never dropped.
pub async fn run_eval(subject: &Subject, items: &[MCQItem], options: &EvalOptions) -> EvalReport {
    let outcomes: Vec<ItemOutcome> = futures::stream::iter(items)
        .map(|item| eval_item(subject, item))
        .buffer_unordered(options.parallelism.max(1))
        .collect()
        .await;
    let kind = subject.kind();
    let label = options.label.clone().unwrap_or_else(|| match kind {
        SubjectKind::BareChat => "bare_chat".into(),
        SubjectKind::Agent => "agent".into(),
    });
    EvalReport::from_outcomes(label, kind, outcomes)
}

use std::collections::BTreeSet;

use super::{ComprehensionError, Intent};
use crate::gateway::{ChatMessage, ChatModel};

#[derive(Debug, Clone, PartialEq)]
pub struct IntentOutcome {
    pub labels: BTreeSet<Intent>,
    /// Set when the labels are the fail-closed default rather than the model's answer.
    pub warning: Option<String>,
}

impl IntentOutcome {
    fn fail_closed(reason: String) -> Self {
        tracing::warn!("intent recognition failed closed: {reason}");
        Self { labels: BTreeSet::from([Intent::OutOfScope]), warning: Some(reason) }
    }
}

fn describe(intent: Intent) -> &'static str {
    match intent {
        Intent::VisualFeatureDescription => "describe what is visible in a dental image",
        Intent::AnomalyDiagnosis => "find or diagnose abnormalities, lesions or diseases",
        Intent::ReportGeneration => "write a structured report for an examination or image",
        Intent::TreatmentPlanning => "propose or compare treatment options",
        Intent::PrognosisPrediction => "predict outcome or progression of a condition",
        Intent::SubtypeGradingClassification => "grade severity or assign a subtype or class",
        Intent::Education => "explain dental knowledge, terminology or procedures",
        Intent::ScientificResearch => "research questions, study design, literature",
        Intent::OutOfScope => "anything unrelated to dentistry or oral health",
    }
}

pub fn intent_system_prompt() -> String {
    let mut prompt = String::from(
        "You label the intent of messages sent to a dental assistant.\n\
         Choose one or more labels from this list:\n",
    );
    for intent in Intent::ALL {
        prompt.push_str(&format!("- {}: {}\n", intent.as_str(), describe(intent)));
    }
    prompt.push_str(
        "\nExamples:\n\
         Message: Is there caries on this tooth?\nLabels: anomaly_diagnosis\n\
         Message: What does this panoramic film show, and please write me a report.\n\
         Labels: visual_feature_description, report_generation\n\
         Message: 根管治疗后多久可以吃东西？\nLabels: education\n\
         Message: What's the best pizza in town?\nLabels: out_of_scope\n\
         \nReply with the labels only, comma-separated, nothing else.",
    );
    prompt
}

/// Parses a comma/newline separated label list. Returns `None` if the list is
/// empty or contains anything outside the taxonomy.
pub fn parse_intents(text: &str) -> Option<BTreeSet<Intent>> {
    let body = text.trim();
    let body = body.strip_prefix("Labels:").or_else(|| body.strip_prefix("labels:")).unwrap_or(body);
    let mut labels = BTreeSet::new();
    for raw in body.split(|c: char| c == ',' || c == '\n' || c == ';' || c == '|' || c.is_whitespace()) {
        let token = raw.trim_matches(|c: char| matches!(c, '"' | '\'' | '[' | ']' | '`' | '.' | ' '));
        if token.is_empty() {
            continue;
        }
        labels.insert(Intent::from_label(&token.to_ascii_lowercase())?);
    }
    (!labels.is_empty()).then_some(labels)
}

/// Labels an utterance with one or more intents. Invalid model output gets one
/// repair prompt; if that also fails, or the gateway fails, the result is
/// `{out_of_scope}` with a warning.
pub async fn recognize_intent(
    model: &dyn ChatModel,
    utterance: &str,
    history: &str,
) -> Result<IntentOutcome, ComprehensionError> {
    if utterance.trim().is_empty() {
        return Err(ComprehensionError::EmptyUtterance);
    }
    let mut user = String::new();
    if !history.trim().is_empty() {
        user.push_str("Conversation so far:\n");
        user.push_str(history.trim());
        user.push_str("\n\n");
    }
    user.push_str("Message: ");
    user.push_str(utterance.trim());
    let mut messages = vec![ChatMessage::system(intent_system_prompt()), ChatMessage::user(user)];

    for attempt in 0..2 {
        let completion = match model.chat(&messages, &[]).await {
            Ok(c) => c,
            Err(e) => return Ok(IntentOutcome::fail_closed(format!("intent model unavailable: {e}"))),
        };
        let reply = completion.text.unwrap_or_default();
        if let Some(labels) = parse_intents(&reply) {
            return Ok(IntentOutcome { labels, warning: None });
        }
        if attempt == 0 {
            messages.push(ChatMessage::assistant(reply));
            messages.push(ChatMessage::user(format!(
                "That reply is not valid. Answer with labels from this list only: {}",
                Intent::ALL.map(Intent::as_str).join(", ")
            )));
        } else {
            return Ok(IntentOutcome::fail_closed(format!("unrecognized intent output {reply:?}")));
        }
    }
    unreachable!("loop returns on its second pass")
}

use std::collections::{BTreeSet, HashSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{Intent, Modality, ModalityLabel};
use crate::clock::Clock;
use crate::text::{detect_language, Language};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionImage {
    pub image_id: String,
    pub artifact_ref: String,
    pub media_type: String,
    pub modality: ModalityLabel,
}

/// The planning input handed to the orchestrator for one user turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredInstruction {
    pub query: String,
    pub images: Vec<InstructionImage>,
    pub intents: BTreeSet<Intent>,
    pub language: Language,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid instruction: {}", .fields.join("; "))]
pub struct ValidationError {
    pub fields: Vec<String>,
}

impl StructuredInstruction {
    pub fn is_out_of_scope(&self) -> bool {
        self.intents.len() == 1 && self.intents.contains(&Intent::OutOfScope)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut fields = Vec::new();
        if self.intents.is_empty() {
            fields.push("intents: must contain at least one label".to_string());
        }
        if self.query.trim().is_empty() && self.images.is_empty() {
            fields.push("query: empty query without images".to_string());
        }
        let mut seen = HashSet::new();
        for (i, img) in self.images.iter().enumerate() {
            if img.image_id.trim().is_empty() {
                fields.push(format!("images[{i}].image_id: empty"));
            } else if !seen.insert(img.image_id.as_str()) {
                fields.push(format!("images[{i}].image_id: duplicate {:?}", img.image_id));
            }
            if !(0.0..=1.0).contains(&img.modality.confidence) {
                fields.push(format!("images[{i}].modality.confidence: {} outside [0, 1]", img.modality.confidence));
            }
        }
        if fields.is_empty() {
            Ok(())
        } else {
            Err(ValidationError { fields })
        }
    }

    /// Prompt rendering of the instruction.
    pub fn render(&self) -> String {
        let mut out = format!("User query ({}): {}\n", self.language, self.query.trim());
        let intents: Vec<&str> = self.intents.iter().map(|i| i.as_str()).collect();
        out.push_str(&format!("Recognized intents: {}\n", intents.join(", ")));
        if self.images.is_empty() {
            out.push_str("Images: none\n");
        } else {
            out.push_str("Images:\n");
            for img in &self.images {
                let modality = match img.modality.value {
                    Modality::Unknown => {
                        format!("unknown modality (best guess confidence {:.2})", img.modality.confidence)
                    }
                    m => format!("{m} (confidence {:.2})", img.modality.confidence),
                };
                out.push_str(&format!("- image_id={} {}\n", img.image_id, modality));
            }
        }
        out
    }
}

/// Assembles and validates the instruction; language is detected from the query's script.
pub fn build_structured_instruction(
    query: &str,
    images: Vec<InstructionImage>,
    intents: BTreeSet<Intent>,
    clock: &dyn Clock,
) -> Result<StructuredInstruction, ValidationError> {
    let instruction = StructuredInstruction {
        query: query.to_string(),
        images,
        language: detect_language(query),
        intents,
        created_at: clock.now(),
    };
    instruction.validate()?;
    Ok(instruction)
}

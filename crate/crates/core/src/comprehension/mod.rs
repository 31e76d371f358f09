//! Turns a raw user turn into a [`StructuredInstruction`]: intent labels for
//! the utterance and a modality label for every uploaded image.

mod instruction;
mod intent;
mod modality;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::gateway::{ChatModel, ModalityClassifier};

pub use instruction::{build_structured_instruction, InstructionImage, StructuredInstruction, ValidationError};
pub use intent::{intent_system_prompt, parse_intents, recognize_intent, IntentOutcome};
pub use modality::{classify_modality, sniff_media_type, ModalityOutcome, DEFAULT_MODALITY_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    VisualFeatureDescription,
    AnomalyDiagnosis,
    ReportGeneration,
    TreatmentPlanning,
    PrognosisPrediction,
    SubtypeGradingClassification,
    Education,
    ScientificResearch,
    OutOfScope,
}

impl Intent {
    pub const ALL: [Intent; 9] = [
        Intent::VisualFeatureDescription,
        Intent::AnomalyDiagnosis,
        Intent::ReportGeneration,
        Intent::TreatmentPlanning,
        Intent::PrognosisPrediction,
        Intent::SubtypeGradingClassification,
        Intent::Education,
        Intent::ScientificResearch,
        Intent::OutOfScope,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Intent::VisualFeatureDescription => "visual_feature_description",
            Intent::AnomalyDiagnosis => "anomaly_diagnosis",
            Intent::ReportGeneration => "report_generation",
            Intent::TreatmentPlanning => "treatment_planning",
            Intent::PrognosisPrediction => "prognosis_prediction",
            Intent::SubtypeGradingClassification => "subtype_grading_classification",
            Intent::Education => "education",
            Intent::ScientificResearch => "scientific_research",
            Intent::OutOfScope => "out_of_scope",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|i| i.as_str() == label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    IntraoralImage,
    PanoramicRadiograph,
    PeriapicalRadiograph,
    CephalometricRadiograph,
    Histopathology,
    Cytopathology,
    Unknown,
}

impl Modality {
    /// The six imaging modalities a classifier can commit to.
    pub const CONCRETE: [Modality; 6] = [
        Modality::IntraoralImage,
        Modality::PanoramicRadiograph,
        Modality::PeriapicalRadiograph,
        Modality::CephalometricRadiograph,
        Modality::Histopathology,
        Modality::Cytopathology,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::IntraoralImage => "intraoral_image",
            Modality::PanoramicRadiograph => "panoramic_radiograph",
            Modality::PeriapicalRadiograph => "periapical_radiograph",
            Modality::CephalometricRadiograph => "cephalometric_radiograph",
            Modality::Histopathology => "histopathology",
            Modality::Cytopathology => "cytopathology",
            Modality::Unknown => "unknown",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::CONCRETE.into_iter().chain([Modality::Unknown]).find(|m| m.as_str() == label)
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalityLabel {
    pub value: Modality,
    pub confidence: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ComprehensionError {
    #[error("utterance is empty")]
    EmptyUtterance,
    #[error("image {image_id} could not be decoded: {reason}")]
    UndecodableImage { image_id: String, reason: String },
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

/// An uploaded image before classification.
#[derive(Debug, Clone)]
pub struct RawImage {
    pub image_id: String,
    pub bytes: Arc<[u8]>,
    /// Artifact-store id under which the bytes are kept.
    pub artifact_ref: String,
}

#[derive(Debug, Clone)]
pub struct Comprehension {
    pub instruction: StructuredInstruction,
    pub warnings: Vec<String>,
}

/// Runs intent recognition and per-image modality classification for one user turn.
pub struct Comprehender {
    intent_model: Arc<dyn ChatModel>,
    classifier: Arc<dyn ModalityClassifier>,
    threshold: f64,
}

impl Comprehender {
    pub fn new(intent_model: Arc<dyn ChatModel>, classifier: Arc<dyn ModalityClassifier>) -> Self {
        Self { intent_model, classifier, threshold: DEFAULT_MODALITY_THRESHOLD }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    /// An empty utterance is legal when images are attached; such turns are
    /// treated as a request to describe the images.
    pub async fn comprehend(
        &self,
        query: &str,
        images: Vec<RawImage>,
        history: &str,
        clock: &dyn Clock,
    ) -> Result<Comprehension, ComprehensionError> {
        let mut warnings = Vec::new();
        let classified = futures::future::join_all(images.iter().map(|img| async {
            classify_modality(self.classifier.as_ref(), &img.image_id, &img.bytes, self.threshold).await
        }))
        .await;

        let mut inputs = Vec::with_capacity(images.len());
        for (img, outcome) in images.iter().zip(classified) {
            let outcome = outcome?;
            warnings.extend(outcome.warning);
            inputs.push(InstructionImage {
                image_id: img.image_id.clone(),
                artifact_ref: img.artifact_ref.clone(),
                media_type: outcome.media_type,
                modality: outcome.label,
            });
        }

        let intents = if query.trim().is_empty() && !inputs.is_empty() {
            BTreeSet::from([Intent::VisualFeatureDescription])
        } else {
            let outcome = recognize_intent(self.intent_model.as_ref(), query, history).await?;
            warnings.extend(outcome.warning);
            outcome.labels
        };

        let instruction = build_structured_instruction(query, inputs, intents, clock)?;
        Ok(Comprehension { instruction, warnings })
    }
}

use super::{ComprehensionError, Modality, ModalityLabel};
use crate::gateway::ModalityClassifier;

/// Below this confidence an image is labelled `unknown`.
pub const DEFAULT_MODALITY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityOutcome {
    pub label: ModalityLabel,
    pub media_type: String,
    pub warning: Option<String>,
}

/// MIME type from the image's magic bytes.
pub fn sniff_media_type(bytes: &[u8]) -> Option<&'static str> {
    match image::guess_format(bytes).ok()? {
        image::ImageFormat::Png => Some("image/png"),
        image::ImageFormat::Jpeg => Some("image/jpeg"),
        _ => None,
    }
}

/// Decodes the image, asks the classifier for a distribution over the six
/// modalities and commits to the argmax only when it clears `threshold`.
/// Classifier failure yields `unknown` with a warning, never a guessed label.
pub async fn classify_modality(
    classifier: &dyn ModalityClassifier,
    image_id: &str,
    bytes: &[u8],
    threshold: f64,
) -> Result<ModalityOutcome, ComprehensionError> {
    let undecodable = |reason: String| ComprehensionError::UndecodableImage { image_id: image_id.to_string(), reason };
    let media_type = sniff_media_type(bytes).ok_or_else(|| undecodable("unsupported or unrecognized format".into()))?;
    image::load_from_memory(bytes).map_err(|e| undecodable(e.to_string()))?;

    let dist = match classifier.classify_image(bytes, media_type).await {
        Ok(d) => d,
        Err(e) => {
            return Ok(ModalityOutcome {
                label: ModalityLabel { value: Modality::Unknown, confidence: 0.0 },
                media_type: media_type.to_string(),
                warning: Some(format!("modality classifier unavailable for {image_id}: {e}")),
            })
        }
    };
    // Ties resolve to the earlier modality in canonical order.
    let (best, confidence) = Modality::CONCRETE
        .into_iter()
        .map(|m| (m, dist.get(&m).copied().unwrap_or(0.0)))
        .fold((Modality::Unknown, f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
    let value = if confidence < threshold { Modality::Unknown } else { best };
    Ok(ModalityOutcome {
        label: ModalityLabel { value, confidence: confidence.clamp(0.0, 1.0) },
        media_type: media_type.to_string(),
        warning: None,
    })
}

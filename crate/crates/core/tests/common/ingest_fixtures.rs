//! Hand-computed postprocess cases stored in `tests/fixtures/postprocess.json`.

use dentagent_core::rag::{postprocess_parsed, strip_references, ParsedDocument};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
pub struct Expected {
    pub page: u32,
    pub text: String,
}

#[derive(Debug, Deserialize)]
pub struct PostprocessCase {
    pub name: String,
    pub rule: String,
    pub document: ParsedDocument,
    pub expected: Vec<Expected>,
}

pub fn postprocess_cases() -> Vec<PostprocessCase> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/postprocess.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Layout cleanup followed by rule-based reference stripping, as the dry-run
/// ingest path applies them. Returns a description of the first mismatch.
pub fn check_case(case: &PostprocessCase) -> Result<(), String> {
    case.document.validate().map_err(|e| e.to_string())?;
    let got: Vec<(u32, String)> =
        postprocess_parsed(&case.document).into_iter().map(|p| (p.page, strip_references(&p.text))).collect();
    let want: Vec<(u32, String)> = case.expected.iter().map(|e| (e.page, e.text.clone())).collect();
    if got != want {
        return Err(format!("{}: got {got:?}, want {want:?}", case.name));
    }
    Ok(())
}

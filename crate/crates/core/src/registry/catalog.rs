use std::collections::HashMap;

use super::{RegistryError, ToolDescriptor};

/// The 22 dental vision tools, one JSON descriptor per line.
pub const SHIPPED_CATALOG: &str = include_str!("../../catalog/tools.jsonl");

/// Base URL for catalog endpoints written as paths; matches `dentagent mock-tools`.
pub const DEFAULT_TOOL_BASE: &str = "http://127.0.0.1:8090";

/// Parses a line-delimited catalog without registering anything. Blank lines
/// are skipped; line numbers are 1-based.
pub fn parse_catalog(text: &str, base_url: &str) -> Result<Vec<(usize, ToolDescriptor)>, RegistryError> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut d: ToolDescriptor =
            serde_json::from_str(raw).map_err(|e| RegistryError::Catalog { line, message: e.to_string() })?;
        if d.endpoint.starts_with('/') {
            d.endpoint = format!("{}{}", base_url.trim_end_matches('/'), d.endpoint);
        }
        if let Some(&first) = seen.get(&d.name) {
            return Err(RegistryError::Duplicate { name: d.name, first, second: line });
        }
        seen.insert(d.name.clone(), line);
        out.push((line, d));
    }
    Ok(out)
}

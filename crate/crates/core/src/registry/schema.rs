//! JSON-schema checks for tool descriptors and call arguments, plus the scalar
//! coercion applied to model-emitted arguments before validation.

use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};

/// One validation failure, addressed by JSON pointer into the instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaIssue {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for SchemaIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let path = if self.path.is_empty() { "/" } else { &self.path };
        write!(f, "{path}: {}", self.message)
    }
}

/// Checks `schema` against its meta-schema. Returns the first issue, with the
/// path pointing into the schema document.
pub fn check_schema_document(schema: &Value) -> Result<(), SchemaIssue> {
    if !schema.is_object() && !schema.is_boolean() {
        return Err(SchemaIssue { path: String::new(), message: "schema must be an object or boolean".into() });
    }
    match jsonschema::meta::try_is_valid(schema) {
        Err(e) => return Err(SchemaIssue { path: "/$schema".into(), message: e.to_string() }),
        Ok(true) => {}
        Ok(false) => {
            if let Err(e) = jsonschema::meta::validate(schema) {
                return Err(SchemaIssue { path: e.instance_path.to_string(), message: e.to_string() });
            }
        }
    }
    jsonschema::validator_for(schema)
        .map(|_| ())
        .map_err(|e| SchemaIssue { path: e.instance_path.to_string(), message: e.to_string() })
}

/// Compiled validator for one schema document.
pub struct CompiledSchema {
    validator: jsonschema::Validator,
}

impl std::fmt::Debug for CompiledSchema {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("CompiledSchema")
    }
}

impl CompiledSchema {
    pub fn compile(schema: &Value) -> Result<Self, SchemaIssue> {
        check_schema_document(schema)?;
        let validator = jsonschema::validator_for(schema)
            .map_err(|e| SchemaIssue { path: e.instance_path.to_string(), message: e.to_string() })?;
        Ok(Self { validator })
    }

    /// All issues, sorted by path. A missing required property is reported at
    /// the path the property would occupy.
    pub fn issues(&self, instance: &Value) -> Vec<SchemaIssue> {
        let mut issues: Vec<SchemaIssue> = self
            .validator
            .iter_errors(instance)
            .map(|e| {
                let mut path = e.instance_path.to_string();
                if let jsonschema::error::ValidationErrorKind::Required { property } = &e.kind {
                    let name = property.as_str().map(str::to_string).unwrap_or_else(|| property.to_string());
                    path.push('/');
                    path.push_str(&escape_pointer(&name));
                }
                SchemaIssue { path, message: e.to_string() }
            })
            .collect();
        issues.sort_by(|a, b| a.path.cmp(&b.path).then_with(|| a.message.cmp(&b.message)));
        issues.dedup();
        issues
    }

    pub fn is_valid(&self, instance: &Value) -> bool {
        self.validator.is_valid(instance)
    }
}

fn escape_pointer(token: &str) -> String {
    token.replace('~', "~0").replace('/', "~1")
}

fn declared_types(schema: &Value) -> Vec<&str> {
    match schema.get("type") {
        Some(Value::String(t)) => vec![t.as_str()],
        Some(Value::Array(ts)) => ts.iter().filter_map(Value::as_str).collect(),
        _ => Vec::new(),
    }
}

/// Rewrites string-encoded scalars where the schema expects a number, integer
/// or boolean:
///
/// | schema type | accepted strings                 | result          |
/// |-------------|----------------------------------|-----------------|
/// | number      | any finite decimal, e.g. `"0.5"` | JSON number     |
/// | integer     | integral decimal, e.g. `"3"`     | JSON integer    |
/// | boolean     | `"true"` / `"false"` (any case)  | JSON boolean    |
///
/// Anything else is left alone for the validator to report. A field whose
/// schema also admits `string` is never coerced.
pub fn coerce_scalars(schema: &Value, value: &mut Value) {
    let types = declared_types(schema);
    if let Value::String(s) = value {
        if types.contains(&"string") {
            return;
        }
        let trimmed = s.trim();
        let coerced = if types.contains(&"integer") {
            trimmed.parse::<i64>().ok().map(Value::from).or_else(|| {
                trimmed
                    .parse::<f64>()
                    .ok()
                    .filter(|f| f.is_finite() && f.fract() == 0.0 && f.abs() < 9.0e15)
                    .map(|f| Value::from(f as i64))
            })
        } else {
            None
        };
        let coerced = coerced.or_else(|| {
            if types.contains(&"number") {
                trimmed.parse::<f64>().ok().and_then(Number::from_f64).map(Value::Number)
            } else {
                None
            }
        });
        let coerced = coerced.or_else(|| {
            if types.contains(&"boolean") {
                match trimmed.to_ascii_lowercase().as_str() {
                    "true" => Some(Value::Bool(true)),
                    "false" => Some(Value::Bool(false)),
                    _ => None,
                }
            } else {
                None
            }
        });
        if let Some(c) = coerced {
            *value = c;
        }
        return;
    }
    match value {
        Value::Object(map) => {
            if let Some(Value::Object(props)) = schema.get("properties") {
                for (key, sub) in props {
                    if let Some(v) = map.get_mut(key) {
                        coerce_scalars(sub, v);
                    }
                }
            }
        }
        Value::Array(items) => {
            if let Some(item_schema) = schema.get("items").filter(|s| s.is_object()) {
                for v in items {
                    coerce_scalars(item_schema, v);
                }
            }
        }
        _ => {}
    }
}

//! Config files: one JSON object, or flat `key = value` lines.

use serde_json::{Map, Value};

/// Parses either format into a flat JSON object. Keys are lowercased and
/// dashes become underscores; `key = value` values are read as JSON when
/// they parse as JSON and as bare strings otherwise.
pub fn parse_config(text: &str) -> Result<Map<String, Value>, String> {
    let trimmed = text.trim();
    let raw = if trimmed.starts_with('{') {
        match serde_json::from_str::<Value>(trimmed) {
            Ok(Value::Object(m)) => m,
            Ok(_) => return Err("config JSON must be an object".into()),
            Err(e) => return Err(format!("config JSON: {e}")),
        }
    } else {
        let mut m = Map::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key=value", no + 1))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(format!("line {}: empty key", no + 1));
            }
            let value = serde_json::from_str::<Value>(v).unwrap_or_else(|_| Value::String(v.to_string()));
            if m.insert(k.to_string(), value).is_some() {
                return Err(format!("line {}: duplicate key '{k}'", no + 1));
            }
        }
        m
    };
    let mut out = Map::new();
    for (k, v) in raw {
        let key = k.to_lowercase().replace('-', "_");
        if out.insert(key.clone(), v).is_some() {
            return Err(format!("duplicate key '{key}'"));
        }
    }
    Ok(out)
}

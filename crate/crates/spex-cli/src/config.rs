//! Configuration documents: strict JSON with unknown keys rejected.
//!
//! Strictness works by round trip: the parsed configuration is
//! re-serialized and every key present in the input must reappear at the
//! same path. Since defaults only add keys, any input key the schema
//! ignored is caught, however deep it sits.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use spex::{Error, Result};

/// Loads and validates a typed configuration document.
pub fn load<T: Serialize + DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    let typed: T = serde_json::from_str(&text).map_err(|e| Error::Schema {
        line: Some(e.line()),
        message: e.to_string(),
    })?;
    let raw: Value = serde_json::from_str(&text).map_err(|e| Error::Schema {
        line: Some(e.line()),
        message: e.to_string(),
    })?;
    let echo = echo_value(&typed)?;
    let mut unknown = Vec::new();
    unknown_keys(&raw, &echo, "$", &mut unknown);
    if let Some(first) = unknown.first() {
        return Err(Error::Schema {
            line: None,
            message: format!("unknown key {first}"),
        });
    }
    Ok(typed)
}

/// Serializes the resolved configuration for embedding in artifacts.
pub fn echo_value<T: Serialize>(cfg: &T) -> Result<Value> {
    serde_json::to_value(cfg).map_err(|e| Error::Schema {
        line: None,
        message: format!("configuration does not serialize: {e}"),
    })
}

fn unknown_keys(input: &Value, echo: &Value, path: &str, out: &mut Vec<String>) {
    match (input, echo) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in a {
                match b.get(k) {
                    Some(w) => unknown_keys(v, w, &format!("{path}.{k}"), out),
                    None => out.push(format!("{path}.{k}")),
                }
            }
        }
        (Value::Array(a), Value::Array(b)) => {
            for (i, (v, w)) in a.iter().zip(b).enumerate() {
                unknown_keys(v, w, &format!("{path}[{i}]"), out);
            }
        }
        _ => {}
    }
}

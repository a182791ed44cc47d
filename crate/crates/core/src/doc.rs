//! Canonical text documents: compact JSON with byte-wise sorted keys.
//!
//! Schemas, dataset metadata, manifests and pipeline specs all use this form
//! so that equal documents hash equally.

use serde::Serialize;
use serde_json::Value;

/// Compact UTF-8 encoding with object keys in byte-wise order.
pub fn canonical_bytes(doc: &Value) -> Vec<u8> {
    serde_json::to_vec(&sorted(doc)).expect("Value serialization is infallible")
}

/// Rebuilds objects with keys inserted in byte-wise order, so the output is
/// canonical whether or not serde_json's `preserve_order` is enabled.
fn sorted(doc: &Value) -> Value {
    match doc {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort_by(|a, b| a.as_bytes().cmp(b.as_bytes()));
            Value::Object(keys.into_iter().map(|k| (k.clone(), sorted(&m[k]))).collect())
        }
        Value::Array(items) => Value::Array(items.iter().map(sorted).collect()),
        other => other.clone(),
    }
}

pub fn canonical_string(doc: &Value) -> String {
    String::from_utf8(canonical_bytes(doc)).expect("serde_json emits UTF-8")
}

/// Serializes any value through [`Value`] so its keys come out sorted.
pub fn to_canonical_bytes<T: Serialize>(value: &T) -> serde_json::Result<Vec<u8>> {
    Ok(canonical_bytes(&serde_json::to_value(value)?))
}

//! Canonical text encoding.
//!
//! Every hash and signature in the system is computed over bytes produced
//! here, so the rules are fixed:
//!
//! - JSON text, UTF-8, no insignificant whitespace
//! - object keys sorted by code point
//! - numbers in minimal decimal form (`1` not `1.0`, `0.2` not `2e-1`)
//! - list order preserved
//!
//! [`Transcript`] is the second encoding: a length-prefixed concatenation of
//! byte fields used for signature payloads and proof statements.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Number, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CanonicalError {
    #[error("value cannot be encoded: {0}")]
    Encode(String),
    #[error("non-finite number in canonical value")]
    NonFinite,
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Encodes any serializable value into canonical bytes.
pub fn to_canonical_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CanonicalError> {
    let value = serde_json::to_value(value).map_err(|e| CanonicalError::Encode(e.to_string()))?;
    let mut out = Vec::with_capacity(256);
    write_value(&value, &mut out)?;
    Ok(out)
}

pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String, CanonicalError> {
    // write_value only emits valid UTF-8.
    Ok(String::from_utf8(to_canonical_bytes(value)?).expect("canonical output is UTF-8"))
}

pub fn from_canonical_slice<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CanonicalError> {
    Ok(serde_json::from_slice(bytes)?)
}

fn write_value(value: &Value, out: &mut Vec<u8>) -> Result<(), CanonicalError> {
    match value {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(true) => out.extend_from_slice(b"true"),
        Value::Bool(false) => out.extend_from_slice(b"false"),
        Value::Number(n) => write_number(n, out)?,
        Value::String(s) => write_string(s, out),
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, out)?;
            }
            out.push(b']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort_unstable();
            out.push(b'{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(key, out);
                out.push(b':');
                write_value(&map[key], out)?;
            }
            out.push(b'}');
        }
    }
    Ok(())
}

fn write_string(s: &str, out: &mut Vec<u8>) {
    // serde_json escapes only what JSON requires and leaves non-ASCII as UTF-8.
    let quoted = serde_json::to_string(s).expect("string encoding is infallible");
    out.extend_from_slice(quoted.as_bytes());
}

const MAX_EXACT_INT: f64 = 9_007_199_254_740_992.0;

fn write_number(n: &Number, out: &mut Vec<u8>) -> Result<(), CanonicalError> {
    if n.is_i64() || n.is_u64() {
        out.extend_from_slice(n.to_string().as_bytes());
        return Ok(());
    }
    let f = n.as_f64().ok_or(CanonicalError::NonFinite)?;
    if !f.is_finite() {
        return Err(CanonicalError::NonFinite);
    }
    if f == 0.0 {
        out.push(b'0');
    } else if f.fract() == 0.0 && f.abs() < MAX_EXACT_INT {
        out.extend_from_slice((f as i64).to_string().as_bytes());
    } else {
        // Shortest round-trip representation.
        out.extend_from_slice(n.to_string().as_bytes());
    }
    Ok(())
}

/// Length-prefixed byte transcript with a domain tag.
///
/// Each field is written as a big-endian `u32` length followed by the bytes,
/// so no two distinct field sequences share an encoding.
#[derive(Debug, Clone)]
pub struct Transcript {
    bytes: Vec<u8>,
}

impl Transcript {
    pub fn new(domain: &str) -> Self {
        let mut t = Self {
            bytes: Vec::with_capacity(192),
        };
        t.push(domain.as_bytes());
        t
    }

    pub fn push(&mut self, field: &[u8]) -> &mut Self {
        let len = u32::try_from(field.len()).expect("transcript field under 4 GiB");
        self.bytes.extend_from_slice(&len.to_be_bytes());
        self.bytes.extend_from_slice(field);
        self
    }

    pub fn push_str(&mut self, field: &str) -> &mut Self {
        self.push(field.as_bytes())
    }

    pub fn push_u64(&mut self, field: u64) -> &mut Self {
        self.push(&field.to_be_bytes())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_sorted_and_compact() {
        let v = json!({"b": 1, "a": [3, 2, {"z": null, "y": true}], "c": "x"});
        assert_eq!(
            to_canonical_string(&v).unwrap(),
            r#"{"a":[3,2,{"y":true,"z":null}],"b":1,"c":"x"}"#
        );
    }

    #[test]
    fn numbers_minimal() {
        let v = json!([1.0, 0.2, 0.0, -0.0, 1.5, 100, 0.15]);
        assert_eq!(to_canonical_string(&v).unwrap(), "[1,0.2,0,0,1.5,100,0.15]");
    }

    #[test]
    fn key_order_independent() {
        let a: Value = serde_json::from_str(r#"{"x":1,"y":{"q":2,"p":3}}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{ "y": {"p":3, "q":2}, "x": 1 }"#).unwrap();
        assert_eq!(
            to_canonical_bytes(&a).unwrap(),
            to_canonical_bytes(&b).unwrap()
        );
    }

    #[test]
    fn non_ascii_kept_as_utf8() {
        let v = json!({"k": "é\"\n"});
        assert_eq!(to_canonical_string(&v).unwrap(), "{\"k\":\"é\\\"\\n\"}");
    }

    #[test]
    fn transcript_is_unambiguous() {
        let mut a = Transcript::new("d");
        a.push_str("ab").push_str("c");
        let mut b = Transcript::new("d");
        b.push_str("a").push_str("bc");
        assert_ne!(a.as_bytes(), b.as_bytes());
    }
}

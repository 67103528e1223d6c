//! Strict recovery of structured payloads from free-form model output.

use std::sync::OnceLock;

use regex::Regex;
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PayloadError {
    #[error("malformed payload: {0}")]
    Malformed(String),
}

impl PayloadError {
    pub fn code(&self) -> &'static str {
        "MALFORMED_PAYLOAD"
    }
}

/// A JSON object whose required fields are known to be strings.
#[derive(Debug, Clone, PartialEq)]
pub struct JsonRecord {
    fields: Map<String, Value>,
}

impl JsonRecord {
    /// Value of a string field. Required fields are always present.
    pub fn str(&self, field: &str) -> Option<&str> {
        self.fields.get(field).and_then(Value::as_str)
    }

    pub fn fields(&self) -> &Map<String, Value> {
        &self.fields
    }
}

fn first_object(raw: &str) -> Option<Map<String, Value>> {
    for (i, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}

/// Finds the first well-formed JSON object in `raw` (prose and code fences
/// around it are ignored) and checks that every required field is present
/// with a string value.
pub fn extract_json(raw: &str, required_fields: &[&str]) -> Result<JsonRecord, PayloadError> {
    let fields = first_object(raw)
        .ok_or_else(|| PayloadError::Malformed("no JSON object found".into()))?;
    for f in required_fields {
        match fields.get(*f) {
            Some(Value::String(_)) => {}
            Some(other) => {
                return Err(PayloadError::Malformed(format!(
                    "field {f} is not a string: {other}"
                )))
            }
            None => return Err(PayloadError::Malformed(format!("missing field {f}"))),
        }
    }
    Ok(JsonRecord { fields })
}

fn integer_token() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+").expect("valid regex"))
}

/// Parses the first integer token of `raw` and accepts it only within `lo..=hi`.
pub fn score_from_text(raw: &str, lo: i64, hi: i64) -> Result<i64, PayloadError> {
    let token = integer_token()
        .find(raw)
        .ok_or_else(|| PayloadError::Malformed("no integer in response".into()))?;
    let value: i64 = token
        .as_str()
        .parse()
        .map_err(|_| PayloadError::Malformed(format!("integer {} overflows", token.as_str())))?;
    if value < lo || value > hi {
        return Err(PayloadError::Malformed(format!(
            "{value} is outside {lo}..={hi}"
        )));
    }
    Ok(value)
}

/// Maps a yes/no answer to a boolean, ignoring case, surrounding whitespace
/// and trailing punctuation.
pub fn normalize_answer(answer: &str) -> Result<bool, PayloadError> {
    let trimmed = answer
        .trim()
        .trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_ascii_lowercase();
    match trimmed.as_str() {
        "yes" => Ok(true),
        "no" => Ok(false),
        _ => Err(PayloadError::Malformed(format!(
            "answer {answer:?} is neither yes nor no"
        ))),
    }
}

use std::collections::BTreeSet;
use std::fmt;

use serde::de::{Deserialize, Deserializer, IgnoredAny, MapAccess, Visitor};
use serde::Serialize;
use serde_json::{Map, Value};

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FormatFailure {
    TagOrder,
    BadJson,
    FieldMismatch,
}

impl fmt::Display for FormatFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FormatFailure::TagOrder => "TAG_ORDER",
            FormatFailure::BadJson => "BAD_JSON",
            FormatFailure::FieldMismatch => "FIELD_MISMATCH",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct FormatVerdict {
    /// 1 when the protocol is satisfied, else 0.
    pub value: u8,
    pub failure: Option<FormatFailure>,
    /// The parsed answer object whenever it was valid JSON, even if the
    /// field set was wrong.
    #[serde(skip)]
    pub answer: Option<Map<String, Value>>,
}

impl FormatVerdict {
    fn fail(failure: FormatFailure, answer: Option<Map<String, Value>>) -> Self {
        Self { value: 0, failure: Some(failure), answer }
    }

    pub fn passed(&self) -> bool {
        self.value == 1
    }
}

/// Binary format reward: exactly one `<think>` block followed by exactly one
/// `<answer>` block (only whitespace around them), whose body is a JSON object
/// without duplicate keys and with exactly the `required` top-level fields.
pub fn format_reward(text: &str, required: &BTreeSet<String>) -> FormatVerdict {
    let Some(body) = answer_body(text) else {
        return FormatVerdict::fail(FormatFailure::TagOrder, None);
    };
    let object = match serde_json::from_str::<Value>(body) {
        Ok(Value::Object(map)) => map,
        _ => return FormatVerdict::fail(FormatFailure::BadJson, None),
    };
    match serde_json::from_str::<TopLevelKeys>(body) {
        Ok(keys) if keys.0.len() == object.len() => {}
        _ => return FormatVerdict::fail(FormatFailure::BadJson, None),
    }
    let keys: BTreeSet<&str> = object.keys().map(String::as_str).collect();
    let wanted: BTreeSet<&str> = required.iter().map(String::as_str).collect();
    if keys != wanted {
        return FormatVerdict::fail(FormatFailure::FieldMismatch, Some(object));
    }
    FormatVerdict { value: 1, failure: None, answer: Some(object) }
}

/// Body of the single `<answer>` block, if the tag grammar holds.
fn answer_body(text: &str) -> Option<&str> {
    for tag in [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE] {
        if text.matches(tag).count() != 1 {
            return None;
        }
    }
    let t0 = text.find(THINK_OPEN)?;
    let t1 = text.find(THINK_CLOSE)?;
    let a0 = text.find(ANSWER_OPEN)?;
    let a1 = text.find(ANSWER_CLOSE)?;
    if !(t0 < t1 && t1 < a0 && a0 < a1) {
        return None;
    }
    let outside = [&text[..t0], &text[t1 + THINK_CLOSE.len()..a0], &text[a1 + ANSWER_CLOSE.len()..]];
    if outside.iter().any(|s| !s.trim().is_empty()) {
        return None;
    }
    Some(text[a0 + ANSWER_OPEN.len()..a1].trim())
}

/// Lenient extraction of the answer object for callers that still want the
/// payload when the format reward is 0.
pub fn extract_answer_object(text: &str) -> Option<Map<String, Value>> {
    let start = text.rfind(ANSWER_OPEN)? + ANSWER_OPEN.len();
    let end = text[start..].find(ANSWER_CLOSE).map(|e| start + e).unwrap_or(text.len());
    match serde_json::from_str::<Value>(text[start..end].trim()) {
        Ok(Value::Object(map)) => Some(map),
        _ => None,
    }
}

/// Top-level keys in document order, duplicates included.
struct TopLevelKeys(Vec<String>);

impl<'de> Deserialize<'de> for TopLevelKeys {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct KeysVisitor;
        impl<'de> Visitor<'de> for KeysVisitor {
            type Value = TopLevelKeys;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut keys = Vec::new();
                while let Some(k) = map.next_key::<String>()? {
                    map.next_value::<IgnoredAny>()?;
                    keys.push(k);
                }
                Ok(TopLevelKeys(keys))
            }
        }
        d.deserialize_map(KeysVisitor)
    }
}

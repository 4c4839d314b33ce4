use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BenchItem, ItemKind};
use crate::llm::prompts::{self, render};
use crate::llm::{ChatParams, ChatRequest, LlmClient, Message};
use crate::reward::extract_answer_object;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GradeFlag {
    UnparseableAnswer,
    BackendError,
    NoJudge,
    JudgeError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grade {
    pub score: f64,
    pub flag: Option<GradeFlag>,
}

impl Grade {
    fn of(score: f64) -> Self {
        Self { score, flag: None }
    }

    pub fn flagged(flag: GradeFlag) -> Self {
        Self { score: 0.0, flag: Some(flag) }
    }
}

/// Partial credit rule for multiple-choice items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiMode {
    /// `|gold ∩ pred| / |gold ∪ pred|`.
    #[default]
    Jaccard,
    /// 1 only for the exact set.
    Strict,
}

/// The `answer` field of the response's answer object.
pub fn parse_model_answer(response: &str) -> Option<Value> {
    extract_answer_object(response)?.remove("answer")
}

/// Lower-cased, trimmed, inner whitespace collapsed.
pub fn normalize_blank(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn letter(s: &str) -> String {
    s.trim().trim_end_matches(['.', ')']).trim().to_uppercase()
}

fn letters(v: &Value) -> Option<BTreeSet<String>> {
    match v {
        Value::Array(a) => a.iter().map(|x| x.as_str().map(letter)).collect(),
        // "A,C" or "A C"
        Value::String(s) => {
            Some(s.split([',', ' ', ';']).map(letter).filter(|l| !l.is_empty()).collect())
        }
        _ => None,
    }
}

/// Grades a single, multiple or fill item from the raw model response.
/// Open and codegen items are not graded here and score 0.
pub fn grade_item(item: &BenchItem, response: &str, multi: MultiMode) -> Grade {
    let Some(answer) = parse_model_answer(response) else {
        return Grade::flagged(GradeFlag::UnparseableAnswer);
    };
    let gold = item.gold.as_ref();
    match item.kind {
        ItemKind::Single => {
            let pred = match &answer {
                Value::String(s) => letter(s),
                Value::Array(a) if a.len() == 1 => match a[0].as_str() {
                    Some(s) => letter(s),
                    None => return Grade::flagged(GradeFlag::UnparseableAnswer),
                },
                _ => return Grade::flagged(GradeFlag::UnparseableAnswer),
            };
            let want = gold.and_then(Value::as_str).map(letter).unwrap_or_default();
            Grade::of(if pred == want { 1.0 } else { 0.0 })
        }
        ItemKind::Multiple => {
            let Some(pred) = letters(&answer) else {
                return Grade::flagged(GradeFlag::UnparseableAnswer);
            };
            let want = gold.and_then(letters).unwrap_or_default();
            let inter = pred.intersection(&want).count() as f64;
            let union = pred.union(&want).count() as f64;
            let score = match multi {
                MultiMode::Jaccard if union > 0.0 => inter / union,
                MultiMode::Jaccard => 0.0,
                MultiMode::Strict => f64::from(u8::from(pred == want)),
            };
            Grade::of(score)
        }
        ItemKind::Fill => {
            let pred: Vec<String> = match &answer {
                Value::String(s) => vec![s.clone()],
                Value::Array(a) => match a.iter().map(|x| x.as_str().map(str::to_string)).collect() {
                    Some(v) => v,
                    None => return Grade::flagged(GradeFlag::UnparseableAnswer),
                },
                _ => return Grade::flagged(GradeFlag::UnparseableAnswer),
            };
            let want: Vec<&str> =
                gold.and_then(Value::as_array).map(|a| a.iter().filter_map(Value::as_str).collect()).unwrap_or_default();
            if want.is_empty() {
                return Grade::of(0.0);
            }
            let hits = want
                .iter()
                .enumerate()
                .filter(|(i, g)| pred.get(*i).is_some_and(|p| normalize_blank(p) == normalize_blank(g)))
                .count();
            Grade::of(hits as f64 / want.len() as f64)
        }
        ItemKind::Open | ItemKind::Codegen => Grade::of(0.0),
    }
}

/// Open items: the judge scores the answer against the gold rubric.
pub fn grade_open(item: &BenchItem, response: &str, judge: &LlmClient) -> Grade {
    let answer = match parse_model_answer(response) {
        Some(Value::String(s)) => s,
        Some(other) => other.to_string(),
        None => return Grade::flagged(GradeFlag::UnparseableAnswer),
    };
    let rubric = item.gold.as_ref().and_then(Value::as_str).unwrap_or("");
    let user = render(prompts::OPEN_JUDGE_USER, &[("question", &item.question), ("rubric", rubric), ("answer", &answer)]);
    let req = ChatRequest::new(
        "bench-judge",
        vec![Message::system(prompts::OPEN_JUDGE_SYSTEM), Message::user(user.trim_end())],
        ChatParams { temperature: 0.0, n_candidates: 1, ..ChatParams::default() },
    );
    let Ok(mut r) = judge.chat(&req) else {
        return Grade::flagged(GradeFlag::JudgeError);
    };
    match extract_answer_object(&r.swap_remove(0)).and_then(|mut m| m.remove("score")).and_then(|v| v.as_f64()) {
        Some(s) if (0.0..=1.0).contains(&s) => Grade::of(s),
        _ => Grade::flagged(GradeFlag::JudgeError),
    }
}

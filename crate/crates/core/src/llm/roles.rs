use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::prompts::{self, render};
use super::{ChatParams, ChatRequest, LlmClient, LlmError, Message};
use crate::reward::{extract_answer_object, format_reward, Dimension, FormatVerdict, JudgedDimension, JudgedDimensions};

pub const SCRIPT_FIELD: &str = "lammps_code";

/// One writer completion with its format verdict and the script it carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WriterDraft {
    pub response: String,
    pub format: FormatVerdict,
    /// Extracted leniently, so a draft that fails the format check can still
    /// be linted and run. Empty when nothing usable was found.
    pub script: String,
}

/// Script text from a writer response: the `lammps_code` field of the
/// answer object, else the first fenced code block.
pub fn extract_script(response: &str) -> Option<String> {
    if let Some(Value::String(code)) = extract_answer_object(response).and_then(|mut m| m.remove(SCRIPT_FIELD)) {
        return Some(code);
    }
    let start = response.find("```")?;
    let body = &response[start + 3..];
    let body = body.split_once('\n').map_or("", |(_, rest)| rest);
    let end = body.find("```")?;
    Some(body[..end].to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodeWriter {
    pub params: ChatParams,
    pub required_fields: BTreeSet<String>,
}

impl Default for CodeWriter {
    fn default() -> Self {
        Self { params: ChatParams::default(), required_fields: BTreeSet::from([SCRIPT_FIELD.to_string()]) }
    }
}

impl CodeWriter {
    pub fn request(&self, task: &str, previous: Option<(&str, &str)>, n: usize) -> ChatRequest {
        let feedback = match previous {
            Some((script, problems)) => render(prompts::WRITER_FEEDBACK, &[("script", script), ("problems", problems)]),
            None => String::new(),
        };
        let user = render(prompts::WRITER_USER, &[("task", task), ("feedback", &feedback)]);
        let params = ChatParams { n_candidates: n, ..self.params.clone() };
        ChatRequest::new("writer", vec![Message::system(prompts::WRITER_SYSTEM), Message::user(user.trim_end())], params)
    }

    /// `n` drafts for `task`; `previous` is the last script and a description
    /// of what was wrong with it.
    pub fn draft(
        &self,
        client: &LlmClient,
        task: &str,
        previous: Option<(&str, &str)>,
        n: usize,
    ) -> Result<Vec<WriterDraft>, LlmError> {
        let responses = client.chat(&self.request(task, previous, n))?;
        Ok(responses
            .into_iter()
            .map(|response| {
                let format = format_reward(&response, &self.required_fields);
                let script = extract_script(&response).unwrap_or_default();
                WriterDraft { response, format, script }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionJudge {
    pub params: ChatParams,
}

impl Default for DimensionJudge {
    fn default() -> Self {
        Self { params: ChatParams { temperature: 0.0, ..ChatParams::default() } }
    }
}

#[derive(Deserialize)]
struct DimVerdict {
    satisfied: bool,
    #[serde(default)]
    rationale: String,
}

impl DimensionJudge {
    pub fn request(&self, task: &str, script: &str, summary: &str) -> ChatRequest {
        let user = render(prompts::JUDGE_USER, &[("task", task), ("script", script), ("summary", summary)]);
        ChatRequest::new(
            "judge",
            vec![Message::system(prompts::JUDGE_SYSTEM), Message::user(user.trim_end())],
            ChatParams { n_candidates: 1, ..self.params.clone() },
        )
    }

    /// Verdicts for dimensions 2-6. The response must pass the format check
    /// with exactly those keys; one malformed reply is retried, a second is
    /// a protocol error.
    pub fn judge(&self, client: &LlmClient, task: &str, script: &str, summary: &str) -> Result<JudgedDimensions, LlmError> {
        let req = self.request(task, script, summary);
        let mut last = String::new();
        for _ in 0..2 {
            let response = client.chat(&req)?.swap_remove(0);
            match parse_judgement(&response) {
                Ok(j) => return Ok(j),
                Err(why) => last = why,
            }
        }
        Err(LlmError::JudgeProtocol(last))
    }
}

fn parse_judgement(response: &str) -> Result<JudgedDimensions, String> {
    let required: BTreeSet<String> = Dimension::JUDGED.iter().map(|d| d.key().to_string()).collect();
    let verdict = format_reward(response, &required);
    let Some(answer) = verdict.answer.filter(|_| verdict.value == 1) else {
        return Err(format!("format check failed: {}", verdict.failure.map(|f| f.to_string()).unwrap_or_default()));
    };
    let mut dims = BTreeMap::new();
    for (key, value) in answer {
        let dim = Dimension::from_key(&key).ok_or_else(|| format!("unexpected key {key}"))?;
        let v: DimVerdict = serde_json::from_value(value).map_err(|e| format!("{key}: {e}"))?;
        dims.insert(dim, JudgedDimension { satisfied: v.satisfied, rationale: v.rationale });
    }
    JudgedDimensions::new(dims, response.to_string()).ok_or_else(|| "dimension set mismatch".to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRewriter {
    pub params: ChatParams,
}

impl Default for QueryRewriter {
    fn default() -> Self {
        Self { params: ChatParams { temperature: 0.3, ..ChatParams::default() } }
    }
}

impl QueryRewriter {
    pub fn request(&self, task: &str, failed_code: &str, feedback: &str) -> ChatRequest {
        let user = render(prompts::REWRITER_USER, &[("task", task), ("script", failed_code), ("feedback", feedback)]);
        ChatRequest::new(
            "rewriter",
            vec![Message::system(prompts::REWRITER_SYSTEM), Message::user(user.trim_end())],
            ChatParams { n_candidates: 1, ..self.params.clone() },
        )
    }

    /// Refined task text. Empty feedback returns `task` unchanged; the result
    /// always contains `task` verbatim.
    pub fn rewrite(&self, client: &LlmClient, task: &str, failed_code: &str, feedback: &str) -> Result<String, LlmError> {
        if feedback.trim().is_empty() {
            return Ok(task.to_string());
        }
        let response = client.chat(&self.request(task, failed_code, feedback))?.swap_remove(0);
        let text = match extract_answer_object(&response).and_then(|mut m| m.remove("rewritten_query")) {
            Some(Value::String(s)) => s,
            _ => response.trim().to_string(),
        };
        let text = text.trim();
        if text.contains(task) {
            Ok(text.to_string())
        } else if text.is_empty() {
            Ok(task.to_string())
        } else {
            Ok(format!("{task}\n\n{text}"))
        }
    }
}

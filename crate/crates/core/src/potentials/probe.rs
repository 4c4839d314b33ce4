use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::llm::prompts::{self, render};
use crate::llm::{ChatParams, ChatRequest, LlmClient, Message};
use crate::reward::extract_answer_object;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Existence {
    Exists,
    NotExists,
    Unknown,
}

/// Asks the configured judge whether a potential file exists anywhere.
/// `NotExists` is returned only on an explicit verdict; backend errors and
/// unparseable answers are `Unknown`.
pub fn existence_probe(file_name: &str, client: &LlmClient) -> Existence {
    let req = ChatRequest::new(
        "existence",
        vec![
            Message::system(prompts::EXISTENCE_SYSTEM),
            Message::user(render(prompts::EXISTENCE_USER, &[("file_name", file_name)]).trim_end()),
        ],
        ChatParams { temperature: 0.0, n_candidates: 1, ..ChatParams::default() },
    );
    let Ok(mut responses) = client.chat(&req) else {
        return Existence::Unknown;
    };
    let verdict = extract_answer_object(&responses.swap_remove(0)).and_then(|mut m| m.remove("verdict"));
    match verdict {
        Some(Value::String(v)) if v == "exists" => Existence::Exists,
        Some(Value::String(v)) if v == "not_exists" => Existence::NotExists,
        _ => Existence::Unknown,
    }
}

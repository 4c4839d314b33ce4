use std::collections::HashMap;

use super::{BackendError, ChatBackend, ChatRequest, Message};
use crate::util::sha256_hex;

type Responder = dyn Fn(&ChatRequest, usize) -> Result<String, BackendError> + Send + Sync;

/// Backend built from a closure `(request, candidate_index) -> completion`.
pub struct FnBackend {
    f: Box<Responder>,
}

impl FnBackend {
    pub fn new(f: impl Fn(&ChatRequest, usize) -> Result<String, BackendError> + Send + Sync + 'static) -> Self {
        Self { f: Box::new(f) }
    }
}

impl ChatBackend for FnBackend {
    fn complete(&self, req: &ChatRequest, first_index: usize, n: usize) -> Result<Vec<String>, BackendError> {
        (first_index..first_index + n).map(|i| (self.f)(req, i)).collect()
    }
}

/// Deterministic offline backend. Responses come from a table keyed by the
/// hash of the message list (candidate `i` takes entry `i`, cycling);
/// unknown prompts get a digest-derived placeholder that depends only on
/// messages, sampling params, seed and candidate index.
#[derive(Default)]
pub struct MockBackend {
    canned: HashMap<String, Vec<String>>,
    fallback: Option<Box<Responder>>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn prompt_hash(messages: &[Message]) -> String {
        sha256_hex(serde_json::to_string(messages).expect("messages serialize"))
    }

    pub fn with_response(mut self, messages: &[Message], responses: Vec<String>) -> Self {
        self.canned.insert(Self::prompt_hash(messages), responses);
        self
    }

    pub fn with_fallback(
        mut self,
        f: impl Fn(&ChatRequest, usize) -> Result<String, BackendError> + Send + Sync + 'static,
    ) -> Self {
        self.fallback = Some(Box::new(f));
        self
    }

    fn one(&self, req: &ChatRequest, index: usize) -> Result<String, BackendError> {
        if let Some(list) = self.canned.get(&Self::prompt_hash(&req.messages)) {
            if !list.is_empty() {
                return Ok(list[index % list.len()].clone());
            }
        }
        if let Some(f) = &self.fallback {
            return f(req, index);
        }
        let key = format!(
            "{}|{}|{}|{:?}|{index}",
            Self::prompt_hash(&req.messages),
            req.params.temperature,
            req.params.max_tokens,
            req.params.seed
        );
        Ok(format!("mock completion {}", &sha256_hex(key)[..16]))
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, req: &ChatRequest, first_index: usize, n: usize) -> Result<Vec<String>, BackendError> {
        (first_index..first_index + n).map(|i| self.one(req, i)).collect()
    }
}

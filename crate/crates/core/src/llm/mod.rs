//! Chat-completion clients and the writer, judge and rewriter roles.

mod http;
mod mock;
pub mod prompts;
mod roles;

use std::fs::File;
use std::io::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::util::Semaphore;

pub use http::{HttpBackend, HttpBackendConfig};
pub use mock::{FnBackend, MockBackend};
pub use roles::{extract_script, CodeWriter, DimensionJudge, QueryRewriter, WriterDraft};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub n_candidates: usize,
    pub seed: Option<u64>,
}

impl Default for ChatParams {
    fn default() -> Self {
        Self { temperature: 0.7, max_tokens: 4096, n_candidates: 1, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    /// Which role issued the request ("writer", "judge", ...). Not sent
    /// over the wire; used for logs and by scripted backends.
    pub purpose: String,
    pub messages: Vec<Message>,
    pub params: ChatParams,
}

impl ChatRequest {
    pub fn new(purpose: impl Into<String>, messages: Vec<Message>, params: ChatParams) -> Self {
        Self { purpose: purpose.into(), messages, params }
    }

    /// Text of the last user message.
    pub fn user_text(&self) -> &str {
        self.messages.iter().rev().find(|m| m.role == Role::User).map_or("", |m| m.content.as_str())
    }
}

/// Failure reported by a backend for a single attempt.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("backend error: {0}")]
    Fatal(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    BackendUnavailable { attempts: u32, message: String },
    #[error("authentication error: {0}")]
    Auth(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("judge protocol error: {0}")]
    JudgeProtocol(String),
}

impl LlmError {
    pub fn code(&self) -> &'static str {
        match self {
            LlmError::BackendUnavailable { .. } => "BACKEND_UNAVAILABLE",
            LlmError::Auth(_) => "AUTH_ERROR",
            LlmError::Backend(_) => "BACKEND_ERROR",
            LlmError::InvalidRequest(_) => "INVALID_REQUEST",
            LlmError::JudgeProtocol(_) => "JUDGE_PROTOCOL_ERROR",
        }
    }
}

/// A chat-completion provider. `first_index` is the candidate index of the
/// first requested completion, so deterministic backends can make candidate
/// `i` independent of how many were requested.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest, first_index: usize, n: usize) -> Result<Vec<String>, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay_ms: 250, max_delay_ms: 8000 }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let ms = self.base_delay_ms.saturating_mul(1u64 << attempt.min(20)).min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Serialize)]
struct LogRecord<'a> {
    purpose: &'a str,
    messages: &'a [Message],
    params: &'a ChatParams,
    completions: Option<&'a [String]>,
    error: Option<String>,
}

/// Shareable client: retries transient failures with exponential backoff,
/// bounds in-flight requests, and always returns exactly `n_candidates`
/// completions or an error.
#[derive(Clone)]
pub struct LlmClient {
    backend: Arc<dyn ChatBackend>,
    retry: RetryPolicy,
    slots: Arc<Semaphore>,
    /// Own counter last; earlier entries belong to the clients this one was
    /// derived from and are bumped too.
    calls: Arc<Vec<Arc<AtomicUsize>>>,
    log: Option<Arc<Mutex<File>>>,
    redact: Arc<Vec<String>>,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient").field("retry", &self.retry).finish_non_exhaustive()
    }
}

impl LlmClient {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend,
            retry: RetryPolicy::default(),
            slots: Arc::new(Semaphore::new(8)),
            calls: Arc::new(vec![Arc::new(AtomicUsize::new(0))]),
            log: None,
            redact: Arc::new(Vec::new()),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.slots = Arc::new(Semaphore::new(n.max(1)));
        self
    }

    /// Strings (such as API keys) scrubbed from the request log.
    pub fn with_redactions(mut self, secrets: Vec<String>) -> Self {
        self.redact = Arc::new(secrets.into_iter().filter(|s| !s.is_empty()).collect());
        self
    }

    /// A client sharing backend, limits and counters, that appends every
    /// request and response as JSON lines to `path`.
    pub fn with_log_file(&self, path: &Path) -> std::io::Result<Self> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { log: Some(Arc::new(Mutex::new(file))), ..self.clone() })
    }

    /// A client sharing backend and limits with its own call counter; calls
    /// through it still count towards this client's total.
    pub fn with_fresh_counter(&self) -> Self {
        let mut calls = (*self.calls).clone();
        calls.push(Arc::new(AtomicUsize::new(0)));
        Self { calls: Arc::new(calls), ..self.clone() }
    }

    /// Number of `chat` calls issued through this client and its clones.
    pub fn call_count(&self) -> usize {
        self.calls.last().map_or(0, |c| c.load(Ordering::SeqCst))
    }

    pub fn chat(&self, req: &ChatRequest) -> Result<Vec<String>, LlmError> {
        if req.messages.is_empty() {
            return Err(LlmError::InvalidRequest("messages must not be empty".into()));
        }
        if req.params.n_candidates == 0 {
            return Err(LlmError::InvalidRequest("n_candidates must be at least 1".into()));
        }
        for c in self.calls.iter() {
            c.fetch_add(1, Ordering::SeqCst);
        }
        let result = {
            let _slot = self.slots.acquire();
            self.chat_inner(req)
        };
        self.write_log(req, &result);
        result
    }

    fn chat_inner(&self, req: &ChatRequest) -> Result<Vec<String>, LlmError> {
        let want = req.params.n_candidates;
        let mut out: Vec<String> = Vec::with_capacity(want);
        let mut failures = 0u32;
        let mut last_error = String::new();
        while out.len() < want {
            match self.backend.complete(req, out.len(), want - out.len()) {
                Ok(batch) if !batch.is_empty() => {
                    let room = want - out.len();
                    out.extend(batch.into_iter().take(room));
                }
                Ok(_) => {
                    failures += 1;
                    last_error = "backend returned no completions".into();
                }
                Err(BackendError::Auth(m)) => return Err(LlmError::Auth(m)),
                Err(BackendError::Fatal(m)) => return Err(LlmError::Backend(m)),
                Err(BackendError::Transient(m)) => {
                    failures += 1;
                    last_error = m;
                }
            }
            if out.len() < want && failures > 0 {
                if failures > self.retry.max_retries {
                    return Err(LlmError::BackendUnavailable { attempts: failures, message: last_error });
                }
                std::thread::sleep(self.retry.delay(failures - 1));
            }
        }
        Ok(out)
    }

    fn write_log(&self, req: &ChatRequest, result: &Result<Vec<String>, LlmError>) {
        let Some(log) = &self.log else { return };
        let record = LogRecord {
            purpose: &req.purpose,
            messages: &req.messages,
            params: &req.params,
            completions: result.as_ref().ok().map(Vec::as_slice),
            error: result.as_ref().err().map(ToString::to_string),
        };
        let mut line = serde_json::to_string(&record).expect("log record serializes");
        for secret in self.redact.iter() {
            line = line.replace(secret.as_str(), "[REDACTED]");
        }
        if let Ok(mut f) = log.lock() {
            let _ = writeln!(f, "{line}");
        }
    }
}

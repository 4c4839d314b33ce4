use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{BackendError, ChatBackend, ChatRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    pub url: String,
    pub path: String,
    pub model: String,
    /// Environment variable holding the API key; unset means no auth header.
    pub api_key_env: Option<String>,
    pub auth_header: String,
    /// Prefix placed before the key in the auth header value.
    pub auth_scheme: String,
    pub timeout_s: f64,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000".into(),
            path: "/v1/chat/completions".into(),
            model: "default".into(),
            api_key_env: None,
            auth_header: "Authorization".into(),
            auth_scheme: "Bearer ".into(),
            timeout_s: 120.0,
        }
    }
}

/// Chat-completions style JSON API over HTTP.
pub struct HttpBackend {
    cfg: HttpBackendConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

impl HttpBackend {
    pub fn new(cfg: HttpBackendConfig) -> Result<Self, BackendError> {
        let api_key = cfg.api_key_env.as_deref().and_then(|v| std::env::var(v).ok()).filter(|k| !k.is_empty());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_s))
            .build()
            .map_err(|e| BackendError::Fatal(e.to_string()))?;
        Ok(Self { cfg, api_key, client })
    }

    /// The resolved API key, so callers can redact it from logs.
    pub fn secret(&self) -> Option<&str> {
        self.api_key.as_deref()
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, req: &ChatRequest, _first_index: usize, n: usize) -> Result<Vec<String>, BackendError> {
        let url = format!("{}{}", self.cfg.url.trim_end_matches('/'), self.cfg.path);
        let mut body = json!({
            "model": self.cfg.model,
            "messages": req.messages,
            "temperature": req.params.temperature,
            "max_tokens": req.params.max_tokens,
            "n": n,
        });
        if let Some(seed) = req.params.seed {
            body["seed"] = json!(seed);
        }
        let mut builder = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.header(self.cfg.auth_header.as_str(), format!("{}{key}", self.cfg.auth_scheme));
        }
        let resp = builder.send().map_err(|e| BackendError::Transient(format!("{url}: {e}")))?;
        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(BackendError::Auth(format!("HTTP {status}")));
        }
        if status == reqwest::StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Err(BackendError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(BackendError::Fatal(format!("HTTP {status}: {}", crate::util::truncate_chars(&text, 500))));
        }
        let parsed: CompletionResponse = resp.json().map_err(|e| BackendError::Transient(format!("bad response body: {e}")))?;
        Ok(parsed.choices.into_iter().map(|c| c.message.content.unwrap_or_default()).collect())
    }
}

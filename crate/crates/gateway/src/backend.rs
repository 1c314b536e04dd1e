//! Model backends: the small model behind a trace-emitting adapter, and a
//! chat-completions style large model.

use std::time::Duration;

use async_trait::async_trait;
use cascade_core::trace::{GenerationTrace, TraceError, TraceStreamParser};
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use crate::config::{LlmBackendConfig, SlmBackendConfig};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("invalid trace: {0}")]
    InvalidTrace(#[from] TraceError),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("missing credential: environment variable {0} is not set")]
    MissingCredential(String),
}

/// The small model, reached through an adapter that streams token traces.
#[async_trait]
pub trait SlmBackend: Send + Sync {
    async fn generate(&self, prompt: &str) -> Result<GenerationTrace, BackendError>;

    async fn score_forced(&self, prompt: &str, forced_text: &str) -> Result<GenerationTrace, BackendError>;
}

/// The large model.
#[async_trait]
pub trait LlmBackend: Send + Sync {
    async fn complete(&self, prompt: &str) -> Result<String, BackendError>;
}

fn client(timeout_secs: u64) -> reqwest::Client {
    reqwest::Client::builder()
        .timeout(Duration::from_secs(timeout_secs))
        .build()
        .expect("http client")
}

pub struct HttpSlmBackend {
    base: String,
    http: reqwest::Client,
}

impl HttpSlmBackend {
    pub fn new(cfg: &SlmBackendConfig) -> Self {
        HttpSlmBackend {
            base: cfg.url.trim_end_matches('/').to_owned(),
            http: client(cfg.timeout_secs),
        }
    }

    async fn fetch_trace(&self, path: &str, body: serde_json::Value) -> Result<GenerationTrace, BackendError> {
        let url = format!("{}{}", self.base, path);
        let mut resp = self
            .http
            .post(&url)
            .json(&body)
            .send()
            .await
            .map_err(|e| BackendError::Unreachable(format!("{url}: {e}")))?;
        if !resp.status().is_success() {
            let status = resp.status().as_u16();
            let body = resp.text().await.unwrap_or_default();
            return Err(BackendError::Status { status, body });
        }
        let mut parser = TraceStreamParser::new();
        while let Some(chunk) = resp
            .chunk()
            .await
            .map_err(|e| BackendError::Unreachable(format!("{url}: {e}")))?
        {
            parser.feed(&chunk)?;
        }
        Ok(parser.finish()?)
    }
}

#[async_trait]
impl SlmBackend for HttpSlmBackend {
    async fn generate(&self, prompt: &str) -> Result<GenerationTrace, BackendError> {
        self.fetch_trace("/generate", json!({ "prompt": prompt })).await
    }

    async fn score_forced(&self, prompt: &str, forced_text: &str) -> Result<GenerationTrace, BackendError> {
        self.fetch_trace(
            "/score_forced",
            json!({ "prompt": prompt, "forced_text": forced_text }),
        )
        .await
    }
}

/// Chat-completions client (`{"model", "messages"}` in, `choices[0].message.content` out).
pub struct ChatCompletionsBackend {
    url: String,
    model: String,
    api_key_env: Option<String>,
    http: reqwest::Client,
}

impl ChatCompletionsBackend {
    pub fn new(cfg: &LlmBackendConfig) -> Self {
        ChatCompletionsBackend {
            url: cfg.url.clone(),
            model: cfg.model.clone(),
            api_key_env: cfg.api_key_env.clone(),
            http: client(cfg.timeout_secs),
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

#[async_trait]
impl LlmBackend for ChatCompletionsBackend {
    async fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let mut req = self.http.post(&self.url).json(&json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": prompt }],
        }));
        if let Some(var) = &self.api_key_env {
            let key = std::env::var(var).map_err(|_| BackendError::MissingCredential(var.clone()))?;
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| BackendError::Unreachable(format!("{}: {e}", self.url)))?;
        if !resp.status().is_success() {
            let status = resp.status().as_u16();
            let body = resp.text().await.unwrap_or_default();
            return Err(BackendError::Status { status, body });
        }
        let parsed: ChatResponse = resp
            .json()
            .await
            .map_err(|e| BackendError::Malformed(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Malformed("no choices in response".into()))
    }
}

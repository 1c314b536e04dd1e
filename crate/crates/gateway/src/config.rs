//! Gateway configuration: a TOML file whose values can be overridden by
//! `CASCADE_*` environment variables.
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! window_k = 15
//! warmup = 5
//! budget_fraction = 0.4
//! rerank_enabled = true
//! chunks_top_n = 10
//! decision_log = "decisions.ndjson"
//!
//! [slm]
//! url = "http://127.0.0.1:9000"
//!
//! [llm]
//! url = "https://api.openai.com/v1/chat/completions"
//! model = "gpt-4o-mini"
//! api_key_env = "OPENAI_API_KEY"
//! ```

use std::path::{Path, PathBuf};

use cascade_core::cascade::CascadeConfig;
use cascade_core::reranker::DEFAULT_RERANK_TEMPLATE;
use cascade_core::scorer::{ScoreConfig, DEFAULT_WINDOW_K};
use cascade_core::threshold::DEFAULT_WARMUP;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("environment variable {var}: {reason}")]
    Env { var: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlmBackendConfig {
    /// Base URL of the trace-emitting adapter (`/generate`, `/score_forced`).
    pub url: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmBackendConfig {
    /// Full URL of a chat-completions endpoint.
    pub url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default = "default_window_k")]
    pub window_k: usize,
    #[serde(default = "default_warmup")]
    pub warmup: u32,
    #[serde(default)]
    pub budget_fraction: Option<f64>,
    #[serde(default = "default_true")]
    pub rerank_enabled: bool,
    #[serde(default = "default_top_n")]
    pub chunks_top_n: usize,
    #[serde(default = "default_rerank_template")]
    pub rerank_template: String,
    #[serde(default)]
    pub decision_log: Option<PathBuf>,
    pub slm: SlmBackendConfig,
    pub llm: LlmBackendConfig,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}
fn default_window_k() -> usize {
    DEFAULT_WINDOW_K
}
fn default_warmup() -> u32 {
    DEFAULT_WARMUP
}
fn default_true() -> bool {
    true
}
fn default_top_n() -> usize {
    10
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_rerank_template() -> String {
    DEFAULT_RERANK_TEMPLATE.into()
}

impl GatewayConfig {
    pub fn new(slm_url: impl Into<String>, llm_url: impl Into<String>, llm_model: impl Into<String>) -> Self {
        GatewayConfig {
            listen: default_listen(),
            window_k: default_window_k(),
            warmup: default_warmup(),
            budget_fraction: None,
            rerank_enabled: true,
            chunks_top_n: default_top_n(),
            rerank_template: default_rerank_template(),
            decision_log: None,
            slm: SlmBackendConfig {
                url: slm_url.into(),
                timeout_secs: default_timeout_secs(),
            },
            llm: LlmBackendConfig {
                url: llm_url.into(),
                model: llm_model.into(),
                api_key_env: None,
                timeout_secs: default_timeout_secs(),
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads the file, applies environment overrides and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env<F>(&mut self, lookup: F) -> Result<(), ConfigError>
    where
        F: Fn(&str) -> Option<String>,
    {
        fn parsed<T: std::str::FromStr>(var: &str, raw: String) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            raw.trim().parse().map_err(|e: T::Err| ConfigError::Env {
                var: var.into(),
                reason: e.to_string(),
            })
        }

        let get = |var: &str| lookup(var).filter(|v| !v.is_empty());
        if let Some(v) = get("CASCADE_LISTEN") {
            self.listen = v;
        }
        if let Some(v) = get("CASCADE_WINDOW_K") {
            self.window_k = parsed("CASCADE_WINDOW_K", v)?;
        }
        if let Some(v) = get("CASCADE_WARMUP") {
            self.warmup = parsed("CASCADE_WARMUP", v)?;
        }
        if let Some(v) = get("CASCADE_BUDGET_FRACTION") {
            self.budget_fraction = match v.as_str() {
                "none" | "off" => None,
                _ => Some(parsed("CASCADE_BUDGET_FRACTION", v)?),
            };
        }
        if let Some(v) = get("CASCADE_RERANK_ENABLED") {
            self.rerank_enabled = parsed("CASCADE_RERANK_ENABLED", v)?;
        }
        if let Some(v) = get("CASCADE_CHUNKS_TOP_N") {
            self.chunks_top_n = parsed("CASCADE_CHUNKS_TOP_N", v)?;
        }
        if let Some(v) = get("CASCADE_RERANK_TEMPLATE") {
            self.rerank_template = v;
        }
        if let Some(v) = get("CASCADE_DECISION_LOG") {
            self.decision_log = Some(PathBuf::from(v));
        }
        if let Some(v) = get("CASCADE_SLM_URL") {
            self.slm.url = v;
        }
        if let Some(v) = get("CASCADE_SLM_TIMEOUT_SECS") {
            self.slm.timeout_secs = parsed("CASCADE_SLM_TIMEOUT_SECS", v)?;
        }
        if let Some(v) = get("CASCADE_LLM_URL") {
            self.llm.url = v;
        }
        if let Some(v) = get("CASCADE_LLM_MODEL") {
            self.llm.model = v;
        }
        if let Some(v) = get("CASCADE_LLM_API_KEY_ENV") {
            self.llm.api_key_env = Some(v);
        }
        if let Some(v) = get("CASCADE_LLM_TIMEOUT_SECS") {
            self.llm.timeout_secs = parsed("CASCADE_LLM_TIMEOUT_SECS", v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.slm.url.trim().is_empty() {
            return invalid("slm.url is empty");
        }
        if self.llm.url.trim().is_empty() {
            return invalid("llm.url is empty");
        }
        if self.llm.model.trim().is_empty() {
            return invalid("llm.model is empty");
        }
        if self.window_k == 0 {
            return invalid("window_k must be at least 1");
        }
        if self.chunks_top_n == 0 {
            return invalid("chunks_top_n must be at least 1");
        }
        if !self.rerank_template.contains("{chunk}") {
            return invalid("rerank_template must contain {chunk}");
        }
        self.cascade()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn score_config(&self) -> ScoreConfig {
        ScoreConfig::new(self.window_k).unwrap_or_default()
    }

    pub fn cascade(&self) -> CascadeConfig {
        CascadeConfig {
            warmup: self.warmup,
            budget_fraction: self.budget_fraction,
        }
    }
}

#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use cascade_core::trace::{serialize_trace, GenerationTrace, Reduction, TokenRecord, TraceMode};
use cascade_gateway::backend::{BackendError, LlmBackend, SlmBackend};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Deserialize;
use serde_json::json;

pub fn seed_of(text: &str) -> u64 {
    let mut h = DefaultHasher::new();
    text.hash(&mut h);
    h.finish()
}

/// Random valid generate-mode trace of the given length.
pub fn random_trace(rng: &mut StdRng, len: usize) -> GenerationTrace {
    let mut tokens: Vec<TokenRecord> = (0..len)
        .map(|i| {
            let p_max: f64 = rng.gen_range(0.05..=1.0);
            let p_real = p_max * rng.gen_range(0.1..=1.0);
            let mut t = TokenRecord::new(i, p_max, p_real, rng.gen_range(0.0..=1.0));
            t.token_text = format!("t{i} ");
            t
        })
        .collect();
    if let Some(last) = tokens.last_mut() {
        last.att_recv = 0.0;
    }
    GenerationTrace {
        mode: TraceMode::Generate,
        reduction: Reduction::Max,
        model_id: "synthetic-slm".into(),
        tokens,
        answer_text: None,
    }
}

/// Deterministic stand-in for a trace-emitting small model.
///
/// `generate` derives a random trace from the prompt hash. `score_forced`
/// gives forced words that occur in the prompt a high probability and
/// other words a low one, so chunks mentioning the query rank first.
#[derive(Default)]
pub struct SyntheticSlm {
    pub generate_calls: AtomicU64,
    pub forced_calls: AtomicU64,
}

impl SyntheticSlm {
    pub fn trace_for(prompt: &str) -> GenerationTrace {
        let mut rng = StdRng::seed_from_u64(seed_of(prompt));
        let len = rng.gen_range(1..=200);
        let mut t = random_trace(&mut rng, len);
        t.answer_text = Some(format!("slm-answer-{:x}", seed_of(prompt) & 0xffff));
        t
    }

    pub fn forced_for(prompt: &str, forced: &str) -> GenerationTrace {
        let prompt_lc = prompt.to_lowercase();
        let words: Vec<&str> = forced.split_whitespace().collect();
        let n = words.len().max(1);
        let tokens = (0..n)
            .map(|i| {
                let w = words.get(i).copied().unwrap_or("?");
                let p = if prompt_lc.contains(&w.to_lowercase()) { 0.9 } else { 0.2 };
                let att = if i + 1 == n { 0.0 } else { 0.5 };
                let mut t = TokenRecord::new(i, 0.95, p, att);
                t.token_text = w.to_string();
                t
            })
            .collect();
        GenerationTrace {
            mode: TraceMode::TeacherForced,
            reduction: Reduction::Max,
            model_id: "synthetic-slm".into(),
            tokens,
            answer_text: None,
        }
    }
}

#[async_trait]
impl SlmBackend for SyntheticSlm {
    async fn generate(&self, prompt: &str) -> Result<GenerationTrace, BackendError> {
        self.generate_calls.fetch_add(1, Ordering::Relaxed);
        Ok(Self::trace_for(prompt))
    }

    async fn score_forced(&self, prompt: &str, forced_text: &str) -> Result<GenerationTrace, BackendError> {
        self.forced_calls.fetch_add(1, Ordering::Relaxed);
        Ok(Self::forced_for(prompt, forced_text))
    }
}

pub struct UnreachableSlm;

#[async_trait]
impl SlmBackend for UnreachableSlm {
    async fn generate(&self, _prompt: &str) -> Result<GenerationTrace, BackendError> {
        Err(BackendError::Unreachable("connection refused".into()))
    }

    async fn score_forced(&self, _prompt: &str, _forced: &str) -> Result<GenerationTrace, BackendError> {
        Err(BackendError::Unreachable("connection refused".into()))
    }
}

/// Large model stub that echoes and counts calls; fails when `fail` is set.
#[derive(Default)]
pub struct StubLlm {
    pub calls: AtomicU64,
    pub fail: bool,
}

impl StubLlm {
    pub fn failing() -> Self {
        StubLlm {
            calls: AtomicU64::new(0),
            fail: true,
        }
    }
}

#[async_trait]
impl LlmBackend for StubLlm {
    async fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if self.fail {
            return Err(BackendError::Status {
                status: 500,
                body: "upstream exploded".into(),
            });
        }
        Ok(format!("llm-answer ({} chars)", prompt.len()))
    }
}

pub async fn spawn(router: Router) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, router).await.unwrap();
    });
    addr
}

#[derive(Deserialize)]
struct GenerateBody {
    prompt: String,
}

#[derive(Deserialize)]
struct ForcedBody {
    prompt: String,
    forced_text: String,
}

/// HTTP adapter speaking the trace protocol, backed by [`SyntheticSlm`].
/// `/broken/generate` emits a trace with an out-of-range probability.
pub fn mock_slm_router() -> Router {
    Router::new()
        .route(
            "/generate",
            post(|Json(b): Json<GenerateBody>| async move { serialize_trace(&SyntheticSlm::trace_for(&b.prompt)) }),
        )
        .route(
            "/score_forced",
            post(|Json(b): Json<ForcedBody>| async move {
                serialize_trace(&SyntheticSlm::forced_for(&b.prompt, &b.forced_text))
            }),
        )
        .route(
            "/broken/generate",
            post(|| async {
                "{\"type\":\"meta\",\"mode\":\"generate\",\"reduction\":\"max\",\"model_id\":\"x\"}\n\
                 {\"type\":\"token\",\"i\":0,\"tok\":\"a\",\"p_max\":1.2,\"p_real\":0.9,\"att_recv\":0}\n"
            }),
        )
}

#[derive(Default)]
pub struct LlmMockState {
    pub calls: AtomicU64,
    pub expected_key: Option<String>,
}

/// Chat-completions mock. `/fail/...` always answers 500.
pub fn mock_llm_router(state: Arc<LlmMockState>) -> Router {
    async fn ok(
        State(st): State<Arc<LlmMockState>>,
        headers: HeaderMap,
        Json(body): Json<serde_json::Value>,
    ) -> Result<Json<serde_json::Value>, StatusCode> {
        st.calls.fetch_add(1, Ordering::Relaxed);
        if let Some(key) = &st.expected_key {
            let auth = headers.get("authorization").and_then(|v| v.to_str().ok());
            if auth != Some(&format!("Bearer {key}")) {
                return Err(StatusCode::UNAUTHORIZED);
            }
        }
        let content = body["messages"][0]["content"].as_str().unwrap_or_default();
        let model = body["model"].as_str().unwrap_or_default();
        Ok(Json(json!({
            "choices": [{ "message": { "role": "assistant", "content": format!("{model}: {} chars", content.len()) } }]
        })))
    }
    Router::new()
        .route("/v1/chat/completions", post(ok))
        .route(
            "/fail/v1/chat/completions",
            post(|| async { (StatusCode::INTERNAL_SERVER_ERROR, "boom") }),
        )
        .with_state(state)
}

//! The cascade pipeline: rerank chunks, get a small-model trace, score it,
//! gate against the dynamic threshold and budget, and escalate if needed.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use cascade_core::cascade::{CascadeController, CascadeDecision, CascadeError, CascadeStats, Route};
use cascade_core::reranker::{chunk_uncertainty, rerank, rerank_prompt, ChunkScore, RerankError};
use cascade_core::scorer::{attenh_score, ScoreConfig, ScoreError};
use futures::future::try_join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::AsyncWriteExt;
use tokio::sync::Mutex;

use crate::backend::{BackendError, LlmBackend, SlmBackend};
use crate::config::GatewayConfig;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("small model backend failed: {0}")]
    Slm(BackendError),
    #[error("scoring failed: {0}")]
    Score(#[from] ScoreError),
    #[error("reranking failed: {0}")]
    Rerank(#[from] RerankError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error("decision log: {0}")]
    Log(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub qid: String,
    pub answer: String,
    pub route: Route,
    pub score: f64,
    pub theta: Option<f64>,
    /// Chunk indices in the order they were placed in the prompt.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chunk_order: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub decision: Option<CascadeDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankResult {
    /// Chunk indices, most relevant first.
    pub order: Vec<usize>,
    /// Uncertainty per chunk, in request order.
    pub g_values: Vec<f64>,
}

pub fn answer_prompt(query: &str, chunks: &[&str]) -> String {
    if chunks.is_empty() {
        return format!("Question: {query}\nAnswer:");
    }
    let mut prompt = String::from("Context:\n");
    for (i, c) in chunks.iter().enumerate() {
        prompt.push_str(&format!("[{}] {}\n\n", i + 1, c));
    }
    prompt.push_str(&format!("Question: {query}\nAnswer:"));
    prompt
}

/// Append-only newline-delimited decision log.
pub struct DecisionLog {
    path: PathBuf,
    file: Mutex<tokio::fs::File>,
}

impl DecisionLog {
    pub async fn open(path: &Path) -> std::io::Result<Self> {
        let file = tokio::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .await?;
        Ok(DecisionLog {
            path: path.to_owned(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub async fn append(&self, decision: &CascadeDecision) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(decision)?;
        line.push(b'\n');
        let mut f = self.file.lock().await;
        f.write_all(&line).await?;
        f.flush().await
    }
}

/// Reads a decision log written by [`DecisionLog`].
pub fn read_decision_log(text: &str) -> Result<Vec<CascadeDecision>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

pub struct CascadeService {
    config: GatewayConfig,
    score_config: ScoreConfig,
    controller: CascadeController,
    slm: Arc<dyn SlmBackend>,
    llm: Arc<dyn LlmBackend>,
    log: Option<DecisionLog>,
    next_qid: AtomicU64,
}

impl CascadeService {
    pub async fn new(
        config: GatewayConfig,
        slm: Arc<dyn SlmBackend>,
        llm: Arc<dyn LlmBackend>,
    ) -> Result<Self, ServiceError> {
        config
            .validate()
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let controller = CascadeController::new(config.cascade())?;
        let log = match &config.decision_log {
            Some(p) => Some(DecisionLog::open(p).await?),
            None => None,
        };
        Ok(CascadeService {
            score_config: config.score_config(),
            config,
            controller,
            slm,
            llm,
            log,
            next_qid: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn stats(&self) -> CascadeStats {
        self.controller.stats()
    }

    /// Scores each chunk by teacher-forcing the query after it and returns
    /// chunk indices by ascending uncertainty.
    pub async fn rerank_chunks(&self, query: &str, chunks: &[String]) -> Result<RerankResult, ServiceError> {
        if query.trim().is_empty() {
            return Err(ServiceError::BadRequest("query is empty".into()));
        }
        let calls = chunks.iter().map(|c| {
            let prompt = rerank_prompt(&self.config.rerank_template, c);
            async move { self.slm.score_forced(&prompt, query).await }
        });
        let traces = try_join_all(calls).await.map_err(ServiceError::Slm)?;
        let scores = traces
            .iter()
            .enumerate()
            .map(|(i, t)| chunk_uncertainty(i, t))
            .collect::<Result<Vec<ChunkScore>, _>>()?;
        Ok(RerankResult {
            order: rerank(&scores),
            g_values: scores.iter().map(|s| s.g_value).collect(),
        })
    }

    pub async fn handle_query(
        &self,
        qid: Option<String>,
        query: &str,
        chunks: &[String],
    ) -> Result<Answer, ServiceError> {
        if query.trim().is_empty() {
            return Err(ServiceError::BadRequest("query is empty".into()));
        }
        let qid = qid.unwrap_or_else(|| format!("q{}", self.next_qid.fetch_add(1, Ordering::Relaxed)));

        let retrieved = &chunks[..chunks.len().min(self.config.chunks_top_n)];
        let chunk_order: Vec<usize> = if self.config.rerank_enabled && retrieved.len() > 1 {
            self.rerank_chunks(query, retrieved).await?.order
        } else {
            (0..retrieved.len()).collect()
        };
        let ordered: Vec<&str> = chunk_order.iter().map(|&i| retrieved[i].as_str()).collect();
        let prompt = answer_prompt(query, &ordered);

        let trace = self.slm.generate(&prompt).await.map_err(ServiceError::Slm)?;
        let score = attenh_score(&trace, &self.score_config)?.value;
        let slm_answer = trace.answer_text.clone().unwrap_or_else(|| {
            trace.tokens.iter().map(|t| t.token_text.as_str()).collect()
        });

        let mut decision = self.controller.admit(qid.clone(), score)?;
        let mut answer = slm_answer.clone();
        let mut error = None;
        if decision.route == Route::Llm {
            match self.llm.complete(&prompt).await {
                Ok(text) => answer = text,
                Err(e) => {
                    tracing::warn!(qid = %qid, "llm call failed, keeping small-model answer: {e}");
                    decision = self.controller.release(&decision, e.to_string())?;
                    error = Some(e.to_string());
                }
            }
        }

        if let Some(log) = &self.log {
            log.append(&decision).await?;
        }
        Ok(Answer {
            qid,
            answer,
            route: decision.route,
            score: decision.score,
            theta: decision.theta,
            chunk_order,
            error,
            decision: Some(decision),
        })
    }
}

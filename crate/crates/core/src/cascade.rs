//! Per-query invocation decisions for a small/large model cascade.
//!
//! [`CascadeController`] owns the threshold state, the LLM-call budget
//! counters and the decision log tail behind one lock, so that deciding,
//! reserving budget and observing the score happen atomically per query.
//! Backend calls are made by the caller outside that critical section.

use std::collections::VecDeque;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::threshold::{Gate, ThresholdError, ThresholdState, DEFAULT_WARMUP};

pub const DEFAULT_LOG_TAIL: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CascadeError {
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
    #[error("invalid cascade config: {0}")]
    Config(String),
    #[error("no pending reservation for decision {0}")]
    UnknownReservation(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Slm,
    Llm,
    /// The gate asked for the LLM but the budget was exhausted (or the LLM
    /// call failed and its reservation was returned).
    SlmBudgetForced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub warmup: u32,
    /// Maximum share of queries allowed to reach the LLM, in `(0, 1]`.
    pub budget_fraction: Option<f64>,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            warmup: DEFAULT_WARMUP,
            budget_fraction: None,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<(), CascadeError> {
        if self.warmup == 0 {
            return Err(CascadeError::Config("warmup must be at least 1".into()));
        }
        if let Some(f) = self.budget_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(CascadeError::Config(format!(
                    "budget_fraction must be in (0, 1], got {f}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub llm_calls: u64,
    pub total_queries: u64,
}

/// Whether one more LLM call keeps the call share within `budget_fraction`
/// once the current query is counted.
pub fn budget_allow(counters: &Counters, budget_fraction: Option<f64>) -> bool {
    match budget_fraction {
        None => true,
        Some(f) => (counters.llm_calls + 1) as f64 <= f * (counters.total_queries + 1) as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeDecision {
    /// Admission order, starting at 0.
    pub seq: u64,
    pub qid: String,
    pub score: f64,
    /// Threshold the score was compared against; absent during warmup.
    pub theta: Option<f64>,
    pub gate: Gate,
    pub route: Route,
    /// Counters after this query was admitted.
    pub llm_calls_so_far: u64,
    pub total_queries: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeStats {
    pub warmup_remaining: u32,
    pub count: u64,
    pub theta: Option<f64>,
    pub llm_calls: u64,
    pub total_queries: u64,
    pub budget_fraction: Option<f64>,
    pub decisions_logged: u64,
    pub recent: Vec<CascadeDecision>,
}

#[derive(Debug)]
struct Inner {
    threshold: ThresholdState,
    counters: Counters,
    next_seq: u64,
    tail: VecDeque<CascadeDecision>,
}

#[derive(Debug)]
pub struct CascadeController {
    config: CascadeConfig,
    tail_len: usize,
    inner: Mutex<Inner>,
}

impl CascadeController {
    pub fn new(config: CascadeConfig) -> Result<Self, CascadeError> {
        config.validate()?;
        Ok(CascadeController {
            config,
            tail_len: DEFAULT_LOG_TAIL,
            inner: Mutex::new(Inner {
                threshold: ThresholdState::with_warmup(config.warmup),
                counters: Counters::default(),
                next_seq: 0,
                tail: VecDeque::new(),
            }),
        })
    }

    pub fn with_tail_len(mut self, tail_len: usize) -> Self {
        self.tail_len = tail_len;
        self
    }

    pub fn config(&self) -> &CascadeConfig {
        &self.config
    }

    /// Decides the route for one scored query, reserves an LLM call if the
    /// route is [`Route::Llm`], and folds the score into the threshold.
    pub fn admit(&self, qid: impl Into<String>, score: f64) -> Result<CascadeDecision, CascadeError> {
        let mut inner = self.inner.lock().unwrap();
        let gate = inner.threshold.decide(score)?;
        let theta = if inner.threshold.in_warmup() {
            None
        } else {
            inner.threshold.mean()
        };
        let route = match gate {
            Gate::Keep => Route::Slm,
            Gate::Invoke if budget_allow(&inner.counters, self.config.budget_fraction) => Route::Llm,
            Gate::Invoke => Route::SlmBudgetForced,
        };
        inner.threshold.observe(score)?;
        inner.counters.total_queries += 1;
        if route == Route::Llm {
            inner.counters.llm_calls += 1;
        }
        let decision = CascadeDecision {
            seq: inner.next_seq,
            qid: qid.into(),
            score,
            theta,
            gate,
            route,
            llm_calls_so_far: inner.counters.llm_calls,
            total_queries: inner.counters.total_queries,
            llm_error: None,
        };
        inner.next_seq += 1;
        inner.tail.push_back(decision.clone());
        while inner.tail.len() > self.tail_len {
            inner.tail.pop_front();
        }
        Ok(decision)
    }

    /// Returns the LLM reservation of a failed call and downgrades the
    /// decision to [`Route::SlmBudgetForced`].
    pub fn release(&self, decision: &CascadeDecision, error: impl Into<String>) -> Result<CascadeDecision, CascadeError> {
        if decision.route != Route::Llm {
            return Err(CascadeError::UnknownReservation(decision.seq));
        }
        let mut inner = self.inner.lock().unwrap();
        inner.counters.llm_calls = inner.counters.llm_calls.saturating_sub(1);
        let mut updated = decision.clone();
        updated.route = Route::SlmBudgetForced;
        updated.llm_error = Some(error.into());
        if let Some(entry) = inner.tail.iter_mut().find(|d| d.seq == decision.seq) {
            *entry = updated.clone();
        }
        Ok(updated)
    }

    pub fn stats(&self) -> CascadeStats {
        let inner = self.inner.lock().unwrap();
        CascadeStats {
            warmup_remaining: inner.threshold.warmup_remaining(),
            count: inner.threshold.count(),
            theta: inner.threshold.mean(),
            llm_calls: inner.counters.llm_calls,
            total_queries: inner.counters.total_queries,
            budget_fraction: self.config.budget_fraction,
            decisions_logged: inner.next_seq,
            recent: inner.tail.iter().cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMismatch {
    pub seq: u64,
    pub recorded: CascadeDecision,
    pub replayed: CascadeDecision,
}

/// Re-runs recorded decisions through a fresh controller and reports every
/// decision that does not come out identical. Recorded LLM failures are
/// replayed as failures.
pub fn replay(config: CascadeConfig, recorded: &[CascadeDecision]) -> Result<Vec<ReplayMismatch>, CascadeError> {
    let controller = CascadeController::new(config)?;
    let mut ordered: Vec<&CascadeDecision> = recorded.iter().collect();
    ordered.sort_by_key(|d| d.seq);
    let mut mismatches = Vec::new();
    for rec in ordered {
        let mut replayed = controller.admit(rec.qid.clone(), rec.score)?;
        if let Some(err) = &rec.llm_error {
            if replayed.route == Route::Llm {
                replayed = controller.release(&replayed, err.clone())?;
            }
        }
        let same = replayed.seq == rec.seq
            && replayed.gate == rec.gate
            && replayed.route == rec.route
            && replayed.theta.map(f64::to_bits) == rec.theta.map(f64::to_bits)
            && replayed.total_queries == rec.total_queries
            && replayed.llm_calls_so_far == rec.llm_calls_so_far;
        if !same {
            mismatches.push(ReplayMismatch {
                seq: rec.seq,
                recorded: rec.clone(),
                replayed,
            });
        }
    }
    Ok(mismatches)
}

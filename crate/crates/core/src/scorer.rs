//! Sequence-level hallucination scores computed from a [`GenerationTrace`].
//!
//! Every method is oriented the same way: a higher value means the answer is
//! more likely to be hallucinated. All logarithms are natural.

use std::fmt;
use std::num::NonZeroUsize;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{GenerationTrace, TokenRecord, TraceMode};

pub const DEFAULT_WINDOW_K: usize = 15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("trace has no tokens")]
    EmptyTrace,
    #[error("expected a {expected:?} trace, got {found:?}")]
    ModeMismatch {
        expected: TraceMode,
        found: TraceMode,
    },
    #[error("trace lacks logits summary")]
    MissingLse,
    #[error("trace lacks p_min")]
    MissingPMin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreConfig {
    /// Tokens per scoring window.
    pub window_k: NonZeroUsize,
}

impl ScoreConfig {
    /// The Energy baseline only sees the log-sum-exp at native temperature.
    pub const ENERGY_TEMPERATURE: f64 = 1.0;

    pub fn new(window_k: usize) -> Option<Self> {
        NonZeroUsize::new(window_k).map(|window_k| ScoreConfig { window_k })
    }
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            window_k: NonZeroUsize::new(DEFAULT_WINDOW_K).unwrap(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    Attenh,
    Perplexity,
    Energy,
    AvgRange,
}

impl ScoreMethod {
    pub const ALL: [ScoreMethod; 4] = [
        ScoreMethod::Attenh,
        ScoreMethod::Perplexity,
        ScoreMethod::Energy,
        ScoreMethod::AvgRange,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMethod::Attenh => "attenh",
            ScoreMethod::Perplexity => "perplexity",
            ScoreMethod::Energy => "energy",
            ScoreMethod::AvgRange => "avg_range",
        }
    }
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScoreMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown scoring method `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub method: ScoreMethod,
    pub value: f64,
    /// Per-window values, only for [`ScoreMethod::Attenh`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_scores: Option<Vec<f64>>,
}

/// Exponential amplification of the attention a token receives.
#[inline]
pub fn atten_amplify(att_recv: f64) -> f64 {
    att_recv.exp()
}

/// Uncertainty contribution of one token: `p_max * exp(att_recv) * -ln(p_max)`.
///
/// Exactly zero when `p_max == 1`.
#[inline]
pub fn token_term(rec: &TokenRecord) -> f64 {
    let surprisal = -rec.p_max.ln();
    if surprisal <= 0.0 {
        return 0.0;
    }
    rec.p_max * atten_amplify(rec.att_recv) * surprisal
}

/// Attention-weighted accumulated uncertainty of one window of tokens.
pub fn window_score(tokens: &[TokenRecord]) -> f64 {
    tokens.iter().map(token_term).sum()
}

/// Maximum window score over consecutive windows of `cfg.window_k` tokens.
/// A short final window is scored on its own.
pub fn attenh_score(trace: &GenerationTrace, cfg: &ScoreConfig) -> Result<SequenceScore, ScoreError> {
    expect_mode(trace, TraceMode::Generate)?;
    if trace.tokens.is_empty() {
        return Err(ScoreError::EmptyTrace);
    }
    let windows: Vec<f64> = trace
        .tokens
        .chunks(cfg.window_k.get())
        .map(window_score)
        .collect();
    let value = windows.iter().copied().fold(0.0, f64::max);
    Ok(SequenceScore {
        method: ScoreMethod::Attenh,
        value,
        window_scores: Some(windows),
    })
}

pub fn perplexity_score(trace: &GenerationTrace) -> Result<SequenceScore, ScoreError> {
    let q = nonempty(trace)?;
    let nll: f64 = trace.tokens.iter().map(|t| -t.p_real.ln()).sum();
    Ok(plain(ScoreMethod::Perplexity, (nll / q).exp()))
}

/// Mean of `-T * logsumexp(logits)` with `T = 1`.
pub fn energy_score(trace: &GenerationTrace, _cfg: &ScoreConfig) -> Result<SequenceScore, ScoreError> {
    let q = nonempty(trace)?;
    let mut total = 0.0;
    for tok in &trace.tokens {
        let lse = tok.lse_logits.ok_or(ScoreError::MissingLse)?;
        total += -ScoreConfig::ENERGY_TEMPERATURE * lse;
    }
    Ok(plain(ScoreMethod::Energy, total / q))
}

/// Negated mean gap between the largest and smallest token probability.
pub fn avg_range_score(trace: &GenerationTrace) -> Result<SequenceScore, ScoreError> {
    let q = nonempty(trace)?;
    let mut total = 0.0;
    for tok in &trace.tokens {
        let p_min = tok.p_min.ok_or(ScoreError::MissingPMin)?;
        total += tok.p_max - p_min;
    }
    Ok(plain(ScoreMethod::AvgRange, -(total / q)))
}

pub fn score(
    trace: &GenerationTrace,
    method: ScoreMethod,
    cfg: &ScoreConfig,
) -> Result<SequenceScore, ScoreError> {
    match method {
        ScoreMethod::Attenh => attenh_score(trace, cfg),
        ScoreMethod::Perplexity => perplexity_score(trace),
        ScoreMethod::Energy => energy_score(trace, cfg),
        ScoreMethod::AvgRange => avg_range_score(trace),
    }
}

fn expect_mode(trace: &GenerationTrace, expected: TraceMode) -> Result<(), ScoreError> {
    if trace.mode != expected {
        return Err(ScoreError::ModeMismatch {
            expected,
            found: trace.mode,
        });
    }
    Ok(())
}

fn nonempty(trace: &GenerationTrace) -> Result<f64, ScoreError> {
    if trace.tokens.is_empty() {
        Err(ScoreError::EmptyTrace)
    } else {
        Ok(trace.tokens.len() as f64)
    }
}

fn plain(method: ScoreMethod, value: f64) -> SequenceScore {
    SequenceScore {
        method,
        value,
        window_scores: None,
    }
}

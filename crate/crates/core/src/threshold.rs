//! Dynamic invocation threshold: the running mean of every observed score,
//! with a warmup period during which the gate never fires.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_WARMUP: u32 = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThresholdError {
    #[error("score is not finite: {0}")]
    NonFinite(f64),
    #[error("no scores observed and warmup is over")]
    NoHistory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    Keep,
    Invoke,
}

/// Running-mean threshold state.
///
/// The sum is kept with Neumaier compensation so the mean stays within a few
/// ulps of the exact mean regardless of stream length or order.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdState {
    warmup_remaining: u32,
    count: u64,
    sum: f64,
    compensation: f64,
}

impl Default for ThresholdState {
    fn default() -> Self {
        Self::with_warmup(DEFAULT_WARMUP)
    }
}

impl ThresholdState {
    pub fn with_warmup(warmup: u32) -> Self {
        ThresholdState {
            warmup_remaining: warmup,
            count: 0,
            sum: 0.0,
            compensation: 0.0,
        }
    }

    pub fn warmup_remaining(&self) -> u32 {
        self.warmup_remaining
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Current threshold; `None` until a score has been observed.
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| (self.sum + self.compensation) / self.count as f64)
    }

    pub fn in_warmup(&self) -> bool {
        self.warmup_remaining > 0
    }

    pub fn observe(&mut self, score: f64) -> Result<(), ThresholdError> {
        if !score.is_finite() {
            return Err(ThresholdError::NonFinite(score));
        }
        let t = self.sum + score;
        if self.sum.abs() >= score.abs() {
            self.compensation += (self.sum - t) + score;
        } else {
            self.compensation += (score - t) + self.sum;
        }
        self.sum = t;
        self.count += 1;
        self.warmup_remaining = self.warmup_remaining.saturating_sub(1);
        Ok(())
    }

    /// Gate decision against the current (pre-update) mean. Scores equal to
    /// the threshold escalate.
    pub fn decide(&self, score: f64) -> Result<Gate, ThresholdError> {
        if !score.is_finite() {
            return Err(ThresholdError::NonFinite(score));
        }
        if self.in_warmup() {
            return Ok(Gate::Keep);
        }
        let theta = self.mean().ok_or(ThresholdError::NoHistory)?;
        Ok(if score < theta { Gate::Keep } else { Gate::Invoke })
    }
}

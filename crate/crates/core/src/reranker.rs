//! Chunk re-ranking by how confidently the small model regenerates the user
//! query from each retrieved chunk.
//!
//! Each chunk is scored from a teacher-forced trace of the query tokens under
//! a chunk-conditioned prompt. Lower uncertainty ranks first.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scorer::atten_amplify;
use crate::trace::{GenerationTrace, TokenRecord, TraceMode};

/// Prompt used to ask the small model to regenerate the query from a chunk.
/// `{chunk}` is replaced by the chunk text; the query is teacher-forced after it.
pub const DEFAULT_RERANK_TEMPLATE: &str = "Passage: {chunk}\nWrite a question this passage answers:\n";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RerankError {
    #[error("trace has no tokens")]
    EmptyTrace,
    #[error("chunk scoring needs a teacher_forced trace")]
    ModeMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkScore<I = usize> {
    pub chunk_id: I,
    /// Attention-weighted negative log-likelihood of the forced query tokens.
    pub g_value: f64,
    pub trace_len: usize,
}

pub fn rerank_prompt(template: &str, chunk: &str) -> String {
    template.replace("{chunk}", chunk)
}

/// `sum exp(att_recv) * -ln(p_real)` over the given tokens.
pub fn forced_uncertainty(tokens: &[TokenRecord]) -> f64 {
    tokens
        .iter()
        .map(|t| {
            let nll = -t.p_real.ln();
            if nll <= 0.0 {
                0.0
            } else {
                atten_amplify(t.att_recv) * nll
            }
        })
        .sum()
}

pub fn chunk_uncertainty<I>(chunk_id: I, trace: &GenerationTrace) -> Result<ChunkScore<I>, RerankError> {
    if trace.mode != TraceMode::TeacherForced {
        return Err(RerankError::ModeMismatch);
    }
    if trace.tokens.is_empty() {
        return Err(RerankError::EmptyTrace);
    }
    Ok(ChunkScore {
        chunk_id,
        g_value: forced_uncertainty(&trace.tokens),
        trace_len: trace.tokens.len(),
    })
}

/// Chunk ids by ascending uncertainty; ties keep retrieval order.
pub fn rerank<I: Clone>(scores: &[ChunkScore<I>]) -> Vec<I> {
    let mut order: Vec<&ChunkScore<I>> = scores.iter().collect();
    order.sort_by(|a, b| a.g_value.total_cmp(&b.g_value));
    order.into_iter().map(|s| s.chunk_id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Reduction;
    use proptest::prelude::*;

    fn forced(tokens: &[(f64, f64)]) -> GenerationTrace {
        GenerationTrace {
            mode: TraceMode::TeacherForced,
            reduction: Reduction::Max,
            model_id: "toy".into(),
            tokens: tokens
                .iter()
                .enumerate()
                .map(|(i, &(p, a))| TokenRecord::new(i, 1.0, p, a))
                .collect(),
            answer_text: None,
        }
    }

    fn cs(id: &'static str, g: f64) -> ChunkScore<&'static str> {
        ChunkScore {
            chunk_id: id,
            g_value: g,
            trace_len: 1,
        }
    }

    #[test]
    fn certain_query_has_zero_uncertainty() {
        let s = chunk_uncertainty(0, &forced(&[(1.0, 0.3), (1.0, 0.0)])).unwrap();
        assert_eq!(s.g_value, 0.0);
        assert_eq!(s.trace_len, 2);
    }

    #[test]
    fn worked_values() {
        let two = chunk_uncertainty(0, &forced(&[(0.5, 0.0), (0.5, 0.0)])).unwrap();
        assert!((two.g_value - 1.386_294_361_119_890_6).abs() < 1e-15);
        let amplified = chunk_uncertainty(0, &forced(&[(0.5, 1.0)])).unwrap();
        assert!((amplified.g_value - 1.884_169_385_363_72).abs() < 1e-14);
    }

    #[test]
    fn rejects_generate_mode_and_empty() {
        let mut tr = forced(&[(0.5, 0.0)]);
        tr.mode = TraceMode::Generate;
        assert_eq!(chunk_uncertainty(0, &tr), Err(RerankError::ModeMismatch));
        assert_eq!(chunk_uncertainty(0, &forced(&[])), Err(RerankError::EmptyTrace));
    }

    #[test]
    fn ascending_order() {
        let order = rerank(&[cs("a", 0.5), cs("b", 0.1), cs("c", 0.9)]);
        assert_eq!(order, vec!["b", "a", "c"]);
    }

    #[test]
    fn ties_keep_retrieval_order() {
        let order = rerank(&[cs("x", 1.0), cs("y", 1.0), cs("z", 1.0)]);
        assert_eq!(order, vec!["x", "y", "z"]);
    }

    #[test]
    fn template_substitution() {
        let p = rerank_prompt(DEFAULT_RERANK_TEMPLATE, "Paris is in France.");
        assert_eq!(p, "Passage: Paris is in France.\nWrite a question this passage answers:\n");
    }

    proptest! {
        #[test]
        fn output_is_permutation(gs in prop::collection::vec(0.0f64..5.0, 1..40)) {
            let scores: Vec<ChunkScore> = gs.iter().enumerate()
                .map(|(i, &g)| ChunkScore { chunk_id: i, g_value: g, trace_len: 1 })
                .collect();
            let mut order = rerank(&scores);
            order.sort_unstable();
            prop_assert_eq!(order, (0..gs.len()).collect::<Vec<_>>());
        }

        #[test]
        fn common_positive_scale_keeps_order(gs in prop::collection::vec(0.0f64..5.0, 1..40), c in 0.1f64..10.0) {
            let mk = |scale: f64| -> Vec<ChunkScore> {
                gs.iter().enumerate()
                    .map(|(i, &g)| ChunkScore { chunk_id: i, g_value: g * scale, trace_len: 1 })
                    .collect()
            };
            prop_assert_eq!(rerank(&mk(1.0)), rerank(&mk(c)));
        }
    }
}

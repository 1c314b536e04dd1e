//! Building blocks for a small/large language model cascade that escalates
//! to the large model only when the small model's answer looks hallucinated.
//!
//! - [`trace`]: per-token probability/attention traces and their wire format
//! - [`scorer`]: attention-weighted uncertainty score and single-pass baselines
//! - [`threshold`]: running-mean invocation threshold with warmup
//! - [`reranker`]: chunk ordering by query-regeneration uncertainty
//! - [`cascade`]: per-query routing decisions under an LLM-call budget
//! - [`evalkit`]: Rouge-L labelling, AUROC and accuracy reports

pub mod cascade;
pub mod evalkit;
pub mod reranker;
pub mod scorer;
pub mod threshold;
pub mod trace;

pub use cascade::{budget_allow, CascadeConfig, CascadeController, CascadeDecision, CascadeStats, Counters, Route};
pub use reranker::{chunk_uncertainty, rerank, ChunkScore};
pub use scorer::{attenh_score, ScoreConfig, ScoreMethod, SequenceScore};
pub use threshold::{Gate, ThresholdState};
pub use trace::{parse_trace_stream, serialize_trace, GenerationTrace, Reduction, TokenRecord, TraceError, TraceMode};

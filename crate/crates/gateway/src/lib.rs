//! HTTP gateway that answers with a small language model and escalates to a
//! large one only when the small model's answer scores as a likely
//! hallucination.

pub mod backend;
pub mod config;
pub mod http;
pub mod service;

pub use backend::{BackendError, ChatCompletionsBackend, HttpSlmBackend, LlmBackend, SlmBackend};
pub use config::GatewayConfig;
pub use service::{Answer, CascadeService, RerankResult, ServiceError};

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cascade_core::cascade::CascadeStats;
use serde::Deserialize;
use serde_json::json;

use crate::backend::BackendError;
use crate::service::{Answer, CascadeService, RerankResult, ServiceError};

#[derive(Debug, Deserialize)]
pub struct AnswerRequest {
    pub query: String,
    #[serde(default)]
    pub chunks: Vec<String>,
    #[serde(default)]
    pub qid: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct RerankRequest {
    pub query: String,
    pub chunks: Vec<String>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Slm(BackendError::InvalidTrace(_)) | ServiceError::Score(_) | ServiceError::Rerank(_) => {
                StatusCode::BAD_GATEWAY
            }
            ServiceError::Slm(_) => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Cascade(_) | ServiceError::Log(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

pub fn router(service: Arc<CascadeService>) -> Router {
    Router::new()
        .route("/v1/answer", post(answer))
        .route("/v1/rerank", post(rerank))
        .route("/v1/stats", get(stats))
        .with_state(service)
}

async fn answer(
    State(svc): State<Arc<CascadeService>>,
    Json(req): Json<AnswerRequest>,
) -> Result<Json<Answer>, ServiceError> {
    svc.handle_query(req.qid, &req.query, &req.chunks).await.map(Json)
}

async fn rerank(
    State(svc): State<Arc<CascadeService>>,
    Json(req): Json<RerankRequest>,
) -> Result<Json<RerankResult>, ServiceError> {
    if req.chunks.is_empty() {
        return Err(ServiceError::BadRequest("chunks is empty".into()));
    }
    svc.rerank_chunks(&req.query, &req.chunks).await.map(Json)
}

async fn stats(State(svc): State<Arc<CascadeService>>) -> Json<CascadeStats> {
    Json(svc.stats())
}

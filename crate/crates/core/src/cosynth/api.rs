//! HTTP JSON API over [`CosynthService`].
//!
//! | route                        | body                                  |
//! |------------------------------|---------------------------------------|
//! | `GET /queue?state=`          |                                       |
//! | `GET /items/{id}`            |                                       |
//! | `POST /items/{id}/run`       |                                       |
//! | `POST /items/{id}/refine`    | `{"seeds"?: n}`                       |
//! | `POST /items/{id}/decision`  | `{"kind": ..., "version"?: n}`        |
//! | `POST /items/{id}/order`     | `{"edges": [[a, b], ...], "version"?}`|
//! | `POST /items/{id}/annotate`  |                                       |
//! | `GET /export`                |                                       |
//! | `GET /stats`                 |                                       |
//! | `GET /blobs/{hash}`          | PNG bytes                             |
//!
//! Decisions are attributed to the `x-actor` header. Errors come back as
//! `{"error", "kind", "state"?, "current_version"?}` with 404 for unknown
//! ids, 409 for stale versions, 422 for illegal transitions and bad
//! requests against the state machine, and 502 for backend failures.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::workflow::{Annotator, CosynthService, Decision, ExportSummary, ServiceStats};
use super::{Actor, CosynthError, ItemState, ReviewItem};
use crate::engine::CompletionBackend;

#[derive(Clone)]
pub struct ApiContext {
    pub service: Arc<CosynthService>,
    pub backend: Arc<dyn CompletionBackend>,
    pub refiner: Arc<dyn CompletionBackend>,
    pub annotator: Arc<dyn Annotator>,
    pub export_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSummary {
    pub id: String,
    pub state: ItemState,
    pub version: u64,
    pub image: String,
    pub occluders: usize,
    pub occlusion_pct: f64,
    pub flag: Option<String>,
}

impl From<&ReviewItem> for ItemSummary {
    fn from(i: &ReviewItem) -> Self {
        Self { id: i.id.clone(), state: i.state, version: i.version, image: i.image.clone(), occluders: i.occluders.len(), occlusion_pct: i.occlusion_pct, flag: i.flag.clone() }
    }
}

struct ApiError(CosynthError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        use CosynthError::*;
        let (status, kind) = match &self.0 {
            UnknownItem(_) | UnknownBlob(_) => (StatusCode::NOT_FOUND, "not_found"),
            Conflict { .. } => (StatusCode::CONFLICT, "conflict"),
            IllegalTransition { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "illegal_transition"),
            UnknownVariant(_) | InvalidOrder(_) | Precondition(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_request"),
            Backend(_) => (StatusCode::BAD_GATEWAY, "backend"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let mut body = json!({ "error": self.0.to_string(), "kind": kind });
        match &self.0 {
            IllegalTransition { state, .. } => body["state"] = json!(state),
            Conflict { current, .. } => body["current_version"] = json!(current),
            _ => {}
        }
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn actor(h: &HeaderMap) -> Actor {
    Actor::Human(h.get("x-actor").and_then(|v| v.to_str().ok()).filter(|s| !s.is_empty()).unwrap_or("anonymous").to_string())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, CosynthError> + Send + 'static) -> ApiResult<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map(Json).map_err(ApiError),
        Err(e) => Err(ApiError(CosynthError::Log(format!("worker panicked: {e}")))),
    }
}

#[derive(Deserialize)]
struct QueueQuery {
    state: Option<String>,
}

async fn queue(State(c): State<ApiContext>, Query(q): Query<QueueQuery>) -> Result<Json<Vec<ItemSummary>>, Response> {
    let state = match q.state.as_deref().filter(|s| !s.is_empty()) {
        None => None,
        Some(s) => Some(ItemState::parse(s).ok_or_else(|| (StatusCode::BAD_REQUEST, Json(json!({ "error": format!("unknown state {s:?}"), "kind": "bad_request" }))).into_response())?),
    };
    Ok(Json(c.service.items(state).iter().map(ItemSummary::from).collect()))
}

async fn item(State(c): State<ApiContext>, Path(id): Path<String>) -> ApiResult<ReviewItem> {
    c.service.item(&id).map(Json).map_err(ApiError)
}

async fn run(State(c): State<ApiContext>, Path(id): Path<String>, h: HeaderMap) -> ApiResult<ReviewItem> {
    let who = actor(&h);
    blocking(move || c.service.run_initial(&id, c.backend.as_ref(), &who)).await
}

#[derive(Deserialize, Default)]
struct RefineBody {
    seeds: Option<usize>,
}

async fn refine(State(c): State<ApiContext>, Path(id): Path<String>, h: HeaderMap, body: Option<Json<RefineBody>>) -> ApiResult<ReviewItem> {
    let who = actor(&h);
    let seeds = body.and_then(|b| b.0.seeds).unwrap_or(c.service.config().seeds);
    blocking(move || c.service.refine(&id, c.refiner.as_ref(), seeds, &who)).await
}

#[derive(Deserialize)]
struct DecisionBody {
    #[serde(flatten)]
    decision: Decision,
    version: Option<u64>,
}

async fn decision(State(c): State<ApiContext>, Path(id): Path<String>, h: HeaderMap, Json(b): Json<DecisionBody>) -> ApiResult<ReviewItem> {
    let who = actor(&h);
    blocking(move || c.service.decide(&id, b.decision, &who, b.version)).await
}

#[derive(Deserialize)]
struct OrderBody {
    edges: Vec<(String, String)>,
    version: Option<u64>,
}

async fn order(State(c): State<ApiContext>, Path(id): Path<String>, h: HeaderMap, Json(b): Json<OrderBody>) -> ApiResult<ReviewItem> {
    let who = actor(&h);
    blocking(move || c.service.decide(&id, Decision::CorrectOrder { edges: b.edges }, &who, b.version)).await
}

async fn annotate(State(c): State<ApiContext>, Path(id): Path<String>, h: HeaderMap) -> ApiResult<ReviewItem> {
    let who = actor(&h);
    blocking(move || c.service.annotate(&id, c.annotator.as_ref(), &who)).await
}

async fn export(State(c): State<ApiContext>) -> ApiResult<ExportSummary> {
    blocking(move || c.service.export(&c.export_dir)).await
}

async fn stats(State(c): State<ApiContext>) -> Json<ServiceStats> {
    Json(c.service.stats())
}

async fn blob(State(c): State<ApiContext>, Path(hash): Path<String>) -> Result<Response, ApiError> {
    let bytes = c.service.blobs().get(&hash).map_err(ApiError)?;
    Ok(([(header::CONTENT_TYPE, "image/png"), (header::CACHE_CONTROL, "public, max-age=31536000, immutable")], bytes.as_ref().clone()).into_response())
}

pub fn router(ctx: ApiContext) -> Router {
    Router::new()
        .route("/queue", get(queue))
        .route("/items/{id}", get(item))
        .route("/items/{id}/run", post(run))
        .route("/items/{id}/refine", post(refine))
        .route("/items/{id}/decision", post(decision))
        .route("/items/{id}/order", post(order))
        .route("/items/{id}/annotate", post(annotate))
        .route("/export", get(export))
        .route("/stats", get(stats))
        .route("/blobs/{hash}", get(blob))
        .with_state(ctx)
}

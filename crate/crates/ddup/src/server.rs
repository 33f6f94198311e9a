//! JSON HTTP API over a [`CatalogStore`].
//!
//! Readers take the current store generation (an `Arc`) and never block
//! writers. A write clones the store, mutates the clone off the async
//! runtime and swaps it in, so no request sees a half-applied ingest.
//! Writes are serialized by a separate lock.

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::catalog::{CatalogStore, IngestReport};
use crate::config::DedupeSettings;
use crate::error::ServiceError;

pub struct AppState {
    store: RwLock<Arc<CatalogStore>>,
    writer: tokio::sync::Mutex<()>,
    defaults: DedupeSettings,
}

impl AppState {
    pub fn new(store: CatalogStore, defaults: DedupeSettings) -> Arc<Self> {
        Arc::new(Self {
            store: RwLock::new(Arc::new(store)),
            writer: tokio::sync::Mutex::new(()),
            defaults,
        })
    }

    /// The current store generation.
    pub fn snapshot(&self) -> Arc<CatalogStore> {
        self.store.read().expect("store lock").clone()
    }

    fn swap(&self, next: CatalogStore) {
        *self.store.write().expect("store lock") = Arc::new(next);
    }
}

/// An error rendered as `{code, message}` with a matching status.
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "invalid_request",
            message: message.into(),
        }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::UnknownId(_) => StatusCode::NOT_FOUND,
            ServiceError::IndexNotBuilt | ServiceError::NoDecider => StatusCode::CONFLICT,
            _ => match e.code() {
                "invalid_request" | "invalid_vector" | "pca_error" => StatusCode::BAD_REQUEST,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
        };
        Self {
            status,
            code: e.code(),
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

/// Parses a JSON body; an empty body reads as `{}`.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let text: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(text).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        code: "internal",
        message: e.to_string(),
    })?
    .map_err(ApiError::from)
}

fn to_json<T: serde::Serialize>(v: T) -> ApiResult {
    Ok(Json(serde_json::to_value(v).expect("response serializes")))
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn stats(State(s): State<Arc<AppState>>) -> ApiResult {
    to_json(s.snapshot().stats())
}

/// Accepts a JSON array of products or ingestion JSONL.
async fn products(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::bad_request("body is not UTF-8"))?;
    let jsonl = if text.trim_start().starts_with('[') {
        let items: Vec<Value> =
            serde_json::from_str(text).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))?;
        items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\n")
    } else {
        text.to_string()
    };
    let _guard = s.writer.lock().await;
    let current = s.snapshot();
    let (next, report) = blocking(move || {
        let mut next = (*current).clone();
        let report: IngestReport = next.ingest(jsonl.as_bytes())?;
        Ok((next, report))
    })
    .await?;
    let count = next.len();
    s.swap(next);
    to_json(json!({ "lines": report.lines, "accepted": report.accepted, "rejects": report.rejects, "count": count }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchRequest {
    id: Option<String>,
    vector: Option<Vec<f32>>,
    top_n: Option<usize>,
    nprobe: Option<usize>,
}

async fn search(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let req: SearchRequest = parse(&body)?;
    let top_n = req.top_n.unwrap_or(s.defaults.top_n);
    let nprobe = req.nprobe.or(s.defaults.nprobe);
    let store = s.snapshot();
    let results = match (req.id, req.vector) {
        (Some(id), None) => blocking(move || store.find_candidates(&id, top_n, nprobe)).await?,
        (None, Some(v)) => blocking(move || store.search_vector(v, top_n, nprobe)).await?,
        _ => return Err(ApiError::bad_request("give exactly one of `id` or `vector`")),
    };
    let results: Vec<Value> = results
        .into_iter()
        .map(|r| json!({ "id": r.id, "score": r.score, "rank": r.rank }))
        .collect();
    to_json(json!({ "results": results }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScorePairRequest {
    id_a: String,
    id_b: String,
    threshold: Option<f64>,
}

async fn score_pair(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let req: ScorePairRequest = parse(&body)?;
    let threshold = req.threshold.unwrap_or(s.defaults.threshold);
    let store = s.snapshot();
    to_json(blocking(move || store.score_pair(&req.id_a, &req.id_b, threshold)).await?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DedupeRequest {
    top_n: Option<usize>,
    threshold: Option<f64>,
    nprobe: Option<usize>,
}

async fn dedupe(State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let req: DedupeRequest = parse(&body)?;
    let top_n = req.top_n.unwrap_or(s.defaults.top_n);
    let threshold = req.threshold.unwrap_or(s.defaults.threshold);
    let nprobe = req.nprobe.or(s.defaults.nprobe);
    let store = s.snapshot();
    to_json(blocking(move || store.dedupe(top_n, threshold, nprobe)).await?)
}

async fn not_found() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        code: "not_found",
        message: "no such endpoint".to_string(),
    }
}

async fn method_not_allowed() -> ApiError {
    ApiError {
        status: StatusCode::METHOD_NOT_ALLOWED,
        code: "method_not_allowed",
        message: "method not allowed for this endpoint".to_string(),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/stats", get(stats))
        .route("/products", post(products))
        .route("/search", post(search))
        .route("/score-pair", post(score_pair))
        .route("/dedupe", post(dedupe))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

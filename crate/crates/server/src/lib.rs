//! REST facade over the query pipeline.
//!
//! | route            | body / query            | response                  |
//! |------------------|-------------------------|---------------------------|
//! | `GET /search`    | `?q=<text>&k=<n>`       | fused results             |
//! | `POST /ask`      | `{question, k?, include_timings?}` | `AskResponse`  |
//! | `POST /feedback` | `FeedbackEvent`         | `{event_id}`              |
//! | `GET /health`    |                         | component readiness       |
//!
//! The request and response shapes are documented in `docs/api-schema.json`.

use std::future::Future;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use citeqa_core::engine::{AppliedOverride, AskResponse, Engine, EngineError, Stage, StageTimings};
use citeqa_core::feedback::{FeedbackError, FeedbackEvent, FeedbackStore, OverrideKey};
use citeqa_core::hybrid::FusedResult;
use citeqa_core::prompt::{PromptError, MAX_DOCS};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::trace::TraceLayer;

/// Largest `k` accepted by `/search`.
pub const MAX_SEARCH_K: usize = 1000;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub feedback: Arc<FeedbackStore>,
}

/// Error body: `{"error": {"code", "message", "stage"?}}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    stage: Option<Stage>,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "invalid_request",
            stage: None,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            stage: None,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({ "code": self.code, "message": self.message });
        if let Some(stage) = self.stage {
            error["stage"] = json!(stage);
        }
        (self.status, Json(json!({ "error": error }))).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let message = e.to_string();
        match e {
            EngineError::InvalidK { .. } | EngineError::EmptyQuestion => Self::bad_request(message),
            EngineError::Prompt(PromptError::NoResults) => Self {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                code: "no_results",
                stage: Some(Stage::Retrieval),
                message,
            },
            EngineError::Backend { stage, .. } => Self {
                status: StatusCode::BAD_GATEWAY,
                code: "backend_failure",
                stage: Some(stage),
                message,
            },
            _ => Self::internal(message),
        }
    }
}

impl From<FeedbackError> for ApiError {
    fn from(e: FeedbackError) -> Self {
        match e {
            FeedbackError::InvalidLabel(_) | FeedbackError::Invalid(_) | FeedbackError::UnknownDocument(_) => {
                Self::bad_request(e.to_string())
            }
            _ => Self::internal(e.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

#[derive(Debug, Deserialize)]
pub struct SearchParams {
    pub q: String,
    pub k: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SearchResponse {
    pub query: String,
    pub results: Vec<FusedResult>,
}

async fn search(
    State(state): State<AppState>,
    params: Result<Query<SearchParams>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<SearchResponse>, ApiError> {
    let Query(params) = params.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let k = params.k.unwrap_or(state.engine.fusion().final_k);
    if !(1..=MAX_SEARCH_K).contains(&k) {
        return Err(ApiError::bad_request(format!("k must be between 1 and {MAX_SEARCH_K}, got {k}")));
    }
    let engine = Arc::clone(&state.engine);
    let q = params.q.clone();
    let results = blocking(move || engine.search(&q, k)).await??;
    Ok(Json(SearchResponse {
        query: params.q,
        results,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AskRequest {
    pub question: String,
    #[serde(default)]
    pub k: Option<usize>,
    /// Embed stage timings in the body; they are always sent in the
    /// `Server-Timing` header.
    #[serde(default)]
    pub include_timings: bool,
}

fn server_timing(t: &StageTimings) -> HeaderValue {
    let v = format!(
        "retrieval;dur={:.3}, generation;dur={:.3}, parsing;dur={:.3}, verification;dur={:.3}",
        t.retrieval_ms, t.generation_ms, t.parsing_ms, t.verification_ms
    );
    HeaderValue::from_str(&v).expect("ascii header")
}

/// Attaches the latest reviewer label for each (claim, reference) of the
/// response; the engine's own verdicts are left untouched.
fn layer_overrides(resp: &mut AskResponse, store: &FeedbackStore) {
    let latest = store.latest_overrides();
    if latest.is_empty() {
        return;
    }
    for claim in &resp.claims {
        for doc_id in &claim.refs {
            let key = OverrideKey {
                question: resp.question.clone(),
                claim_id: claim.claim_id,
                doc_id: doc_id.clone(),
            };
            if let Some(label) = latest.get(&key) {
                resp.overrides.push(AppliedOverride {
                    claim_id: claim.claim_id,
                    doc_id: doc_id.clone(),
                    label: *label,
                });
            }
        }
    }
}

async fn ask(
    State(state): State<AppState>,
    body: Result<Json<AskRequest>, JsonRejection>,
) -> Result<(HeaderMap, Json<AskResponse>), ApiError> {
    let Json(req) = body?;
    let k = req.k.unwrap_or(MAX_DOCS);
    let engine = Arc::clone(&state.engine);
    let question = req.question.clone();
    let (mut resp, timings) = blocking(move || engine.ask_timed(&question, k)).await??;
    if req.include_timings {
        resp.timings = Some(timings);
    }
    layer_overrides(&mut resp, &state.feedback);
    tracing::info!(
        question = %resp.question,
        claims = resp.claims.len(),
        retrieval_ms = timings.retrieval_ms,
        generation_ms = timings.generation_ms,
        verification_ms = timings.verification_ms,
        "ask"
    );
    let mut headers = HeaderMap::new();
    headers.insert("server-timing", server_timing(&timings));
    Ok((headers, Json(resp)))
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct FeedbackAck {
    pub event_id: u64,
}

async fn feedback(
    State(state): State<AppState>,
    body: Result<Json<FeedbackEvent>, JsonRejection>,
) -> Result<(StatusCode, Json<FeedbackAck>), ApiError> {
    let Json(event) = body?;
    let store = Arc::clone(&state.feedback);
    let event_id = blocking(move || store.record(event)).await??;
    Ok((StatusCode::CREATED, Json(FeedbackAck { event_id })))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ComponentStatus {
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IndexStatus {
    pub ok: bool,
    pub documents: usize,
    pub segments: usize,
    pub memory_mapped: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub index: IndexStatus,
    pub backends: std::collections::BTreeMap<String, ComponentStatus>,
}

async fn health(State(state): State<AppState>) -> Result<(StatusCode, Json<HealthResponse>), ApiError> {
    let engine = Arc::clone(&state.engine);
    let checks = blocking(move || engine.health()).await?;
    let backends: std::collections::BTreeMap<String, ComponentStatus> = checks
        .into_iter()
        .map(|(role, r)| {
            let status = match r {
                Ok(detail) => ComponentStatus { ok: true, detail },
                Err(detail) => ComponentStatus { ok: false, detail },
            };
            (role.to_string(), status)
        })
        .collect();
    let manifest = state.engine.manifest();
    let all_ok = backends.values().all(|c| c.ok);
    let body = HealthResponse {
        status: if all_ok { "ok" } else { "degraded" }.into(),
        index: IndexStatus {
            ok: true,
            documents: manifest.doc_count,
            segments: manifest.segment_count,
            memory_mapped: state.engine.vector().is_memory_mapped(),
        },
        backends,
    };
    let code = if all_ok { StatusCode::OK } else { StatusCode::SERVICE_UNAVAILABLE };
    Ok((code, Json(body)))
}

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE])
        .expose_headers([header::HeaderName::from_static("server-timing")]);
    if origins.iter().any(|o| o == "*") {
        layer.allow_origin(AllowOrigin::any())
    } else {
        let list: Vec<HeaderValue> = origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
        layer.allow_origin(AllowOrigin::list(list))
    }
}

/// Builds the router. `cors_origins` lists browser origins allowed to call
/// the API; `"*"` allows any.
pub fn router(state: AppState, cors_origins: &[String]) -> Router {
    Router::new()
        .route("/search", get(search))
        .route("/ask", post(ask))
        .route("/feedback", post(feedback))
        .route("/health", get(health))
        .layer(cors(cors_origins))
        .layer(TraceLayer::new_for_http())
        .with_state(state)
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

/// Resolves on Ctrl-C or, on Unix, SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

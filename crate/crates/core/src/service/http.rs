use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::{error, info};

use crate::error::{Error, Result};
use crate::index::{load_index, PhraseIndex};
use crate::search::{embed_query, search, SearchConfig, SearchResult, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub question: String,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub strategy: Option<Strategy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub embed_ms: f64,
    pub search_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub results: Vec<SearchResult>,
    pub timings: Timings,
    pub docs_visited: usize,
}

/// Shared, read-only service state. The index slot is filled once loading
/// finishes; until then every route answers 503.
#[derive(Debug, Clone)]
pub struct ServiceState {
    index: Arc<OnceLock<Arc<PhraseIndex>>>,
    defaults: SearchConfig,
}

impl ServiceState {
    pub fn loading(defaults: SearchConfig) -> Self {
        ServiceState {
            index: Arc::new(OnceLock::new()),
            defaults,
        }
    }

    pub fn ready(index: PhraseIndex, defaults: SearchConfig) -> Self {
        let state = Self::loading(defaults);
        state.set_index(index);
        state
    }

    /// Has no effect if an index is already set.
    pub fn set_index(&self, index: PhraseIndex) {
        let _ = self.index.set(Arc::new(index));
    }

    fn get(&self) -> Option<Arc<PhraseIndex>> {
        self.index.get().cloned()
    }
}

fn error_response(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn loading_response() -> Response {
    (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "loading" }))).into_response()
}

async fn health(State(state): State<ServiceState>) -> Response {
    let Some(index) = state.get() else {
        return loading_response();
    };
    let m = index.manifest();
    Json(json!({
        "status": "ok",
        "format_version": m.format_version,
        "encoder": m.encoder,
        "max_span_len": m.max_span_len,
        "ivf_clusters": m.ivf_clusters,
        "counts": m.counts,
    }))
    .into_response()
}

fn answer(index: &PhraseIndex, req: &QueryRequest, config: &SearchConfig) -> Result<QueryResponse> {
    let t0 = Instant::now();
    let q = embed_query(index, &req.question)?;
    let t1 = Instant::now();
    let out = search(index, &q, config)?;
    let t2 = Instant::now();
    let ms = |a: Instant, b: Instant| (b - a).as_secs_f64() * 1e3;
    Ok(QueryResponse {
        results: out.results,
        timings: Timings {
            embed_ms: ms(t0, t1),
            search_ms: ms(t1, t2),
            total_ms: ms(t0, t2),
        },
        docs_visited: out.docs_visited,
    })
}

async fn query(State(state): State<ServiceState>, body: Bytes) -> Response {
    let Some(index) = state.get() else {
        return loading_response();
    };
    let req: QueryRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    if req.question.trim().is_empty() {
        return error_response(StatusCode::BAD_REQUEST, "question is empty");
    }
    let config = SearchConfig {
        top_k: req.top_k.unwrap_or(state.defaults.top_k),
        strategy: req.strategy.unwrap_or(state.defaults.strategy),
        ..state.defaults
    };
    if let Err(e) = config.validate() {
        return error_response(StatusCode::BAD_REQUEST, e.to_string());
    }
    let result = tokio::task::spawn_blocking(move || answer(&index, &req, &config)).await;
    match result {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e @ (Error::EmptyQuestion | Error::Config(_)))) => error_response(StatusCode::BAD_REQUEST, e.to_string()),
        Ok(Err(e)) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(state: ServiceState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/query", post(query))
        .with_state(state)
}

/// Binds `addr`, loads the index in the background and serves until the
/// process is stopped or loading fails.
pub async fn serve(index_dir: PathBuf, addr: SocketAddr, defaults: SearchConfig) -> Result<()> {
    defaults.validate()?;
    let state = ServiceState::loading(defaults);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
    info!(%addr, "listening");
    let app = router(state.clone());
    let server = tokio::spawn(async move { axum::serve(listener, app).await });
    let dir = index_dir.clone();
    let loaded = tokio::task::spawn_blocking(move || load_index(dir))
        .await
        .map_err(|e| Error::Config(format!("index loader panicked: {e}")))
        .and_then(|r| r);
    match loaded {
        Ok(index) => {
            info!(dir = %index_dir.display(), "index loaded");
            state.set_index(index);
        }
        Err(e) => {
            error!(error = %e, "index failed to load");
            server.abort();
            return Err(e);
        }
    }
    server
        .await
        .map_err(|e| Error::Config(format!("server task failed: {e}")))?
        .map_err(|e| Error::Config(format!("server error: {e}")))
}

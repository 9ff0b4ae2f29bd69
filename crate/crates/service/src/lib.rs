//! HTTP/JSON service over a loaded checkpoint: encode, decode, latent
//! edits and generation. Every result is cached under a fresh id in a
//! bounded LRU session store; cached entries are never modified.

mod error;
mod state;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::HeaderValue;
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;
use tower_http::cors::{Any, CorsLayer};

use lpm_core::wire::{
    DecodeRequest, DecodeResponse, EditRequest, EditResponse, EncodeRequest, EncodeResponse, GenerateRequest,
    GenerateResponse, HealthResponse, ModelsResponse,
};

pub use error::ApiError;
pub use state::{AppState, Heads, ServiceConfig, Session};

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
        .map(Json)
}

async fn health(State(s): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        stamp: s.stamp(),
    })
}

async fn models(State(s): State<Arc<AppState>>) -> Json<ModelsResponse> {
    Json(s.models())
}

async fn encode(
    State(s): State<Arc<AppState>>,
    req: Result<Json<EncodeRequest>, JsonRejection>,
) -> ApiResult<EncodeResponse> {
    let Json(req) = req?;
    blocking(move || s.encode(req)).await
}

async fn decode(
    State(s): State<Arc<AppState>>,
    req: Result<Json<DecodeRequest>, JsonRejection>,
) -> ApiResult<DecodeResponse> {
    let Json(req) = req?;
    blocking(move || s.decode(req)).await
}

async fn edit(
    State(s): State<Arc<AppState>>,
    req: Result<Json<EditRequest>, JsonRejection>,
) -> ApiResult<EditResponse> {
    let Json(req) = req?;
    blocking(move || s.edit(req)).await
}

async fn generate(
    State(s): State<Arc<AppState>>,
    req: Result<Json<GenerateRequest>, JsonRejection>,
) -> ApiResult<GenerateResponse> {
    let Json(req) = req?;
    blocking(move || s.generate(req)).await
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = match &state.config().cors_origin {
        Some(origin) => match origin.parse::<HeaderValue>() {
            Ok(v) => CorsLayer::new().allow_origin(v),
            Err(_) => CorsLayer::new().allow_origin(Any),
        },
        None => CorsLayer::new().allow_origin(Any),
    }
    .allow_methods(Any)
    .allow_headers(Any);
    let limit = state.config().body_limit;
    Router::new()
        .route("/health", get(health))
        .route("/models", get(models))
        .route("/encode", post(encode))
        .route("/decode", post(decode))
        .route("/edit", post(edit))
        .route("/generate", post(generate))
        .layer(DefaultBodyLimit::max(limit))
        .layer(cors)
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// Binds `addr` (port 0 picks a free port) and serves in a background
/// task. Returns the bound address and a handle that stops the server
/// when dropped or signalled.
pub async fn spawn(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<(SocketAddr, ServerHandle)> {
    let listener = TcpListener::bind(addr).await?;
    let bound = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let _ = serve(listener, state, async {
            let _ = rx.await;
        })
        .await;
    });
    Ok((bound, ServerHandle { stop: Some(tx), task }))
}

pub struct ServerHandle {
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<()>,
}

impl ServerHandle {
    pub async fn shutdown(mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
    }
}

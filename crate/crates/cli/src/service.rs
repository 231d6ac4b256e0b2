//! HTTP prediction service over an immutable, preloaded index.
//!
//! - `GET /healthz` reports corpus size and CLIP dimension.
//! - `POST /v1/predict` takes one image embedding and an optional caption
//!   embedding and returns the fused prediction with its neighbors.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use promptknn_core::{predict, CorpusIndex, EmbeddingVector, Error, FusionConfig};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_MAX_BODY_BYTES: usize = 4 << 20;
pub const DEFAULT_TIMEOUT_SECS: u64 = 30;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub fusion: FusionConfig,
    pub max_body_bytes: usize,
    pub request_timeout: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: DEFAULT_BIND.parse().unwrap(),
            fusion: FusionConfig::default(),
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
            request_timeout: Duration::from_secs(DEFAULT_TIMEOUT_SECS),
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.bind.port() == 0 {
            return Err("port must be in [1, 65535]".into());
        }
        if self.max_body_bytes == 0 || self.request_timeout.is_zero() {
            return Err("body limit and request timeout must be positive".into());
        }
        self.fusion.validate().map_err(|e| e.to_string())
    }
}

struct AppState {
    index: CorpusIndex,
    fusion: FusionConfig,
    timeout: Duration,
}

#[derive(Debug, Deserialize)]
pub struct PredictRequest {
    pub image_embedding: Vec<f64>,
    #[serde(default)]
    pub caption_embedding: Option<Vec<f64>>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub w1: Option<f64>,
    #[serde(default)]
    pub w2: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NeighborOut {
    pub row: usize,
    pub score: f64,
    pub prompt: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictResponse {
    pub e_pred: Vec<f32>,
    pub neighbors: Vec<NeighborOut>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub corpus_count: usize,
    pub clip_dim: usize,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

/// Converts wire floats, rejecting values `f32` cannot hold.
fn to_vector(name: &str, values: &[f64], expected_dim: usize) -> Result<EmbeddingVector, (StatusCode, String)> {
    if values.len() != expected_dim {
        return Err((
            StatusCode::BAD_REQUEST,
            format!("{name} has dimension {}, expected {expected_dim}", values.len()),
        ));
    }
    let narrowed: Vec<f32> = values.iter().map(|&v| v as f32).collect();
    EmbeddingVector::new(narrowed).map_err(|_| {
        (
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("{name} contains non-finite values"),
        )
    })
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        corpus_count: state.index.len(),
        clip_dim: state.index.clip_dim(),
    })
}

async fn predict_handler(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: PredictRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    let image = match to_vector("image_embedding", &req.image_embedding, state.index.clip_dim()) {
        Ok(v) => v,
        Err((status, msg)) => return error(status, msg),
    };
    let caption = match req.caption_embedding.as_deref() {
        None => None,
        Some(c) => match to_vector("caption_embedding", c, state.index.sent_dim()) {
            Ok(v) => Some(v),
            Err((status, msg)) => return error(status, msg),
        },
    };
    let cfg = FusionConfig {
        k: req.k.unwrap_or(state.fusion.k),
        w1: req.w1.unwrap_or(state.fusion.w1),
        w2: req.w2.unwrap_or(state.fusion.w2),
        ..state.fusion.clone()
    };
    if let Err(e) = cfg.validate() {
        return error(StatusCode::BAD_REQUEST, e.to_string());
    }

    let worker = {
        let state = state.clone();
        tokio::task::spawn_blocking(move || {
            predict(&state.index, &image, caption.as_ref(), &cfg).map(|p| PredictResponse {
                e_pred: p.e_pred.into_vec(),
                neighbors: p
                    .neighbors
                    .neighbors
                    .iter()
                    .map(|n| NeighborOut {
                        row: n.row,
                        score: n.score,
                        prompt: state.index.prompt(n.row).to_string(),
                    })
                    .collect(),
            })
        })
    };
    match tokio::time::timeout(state.timeout, worker).await {
        Err(_) => error(StatusCode::SERVICE_UNAVAILABLE, "request timed out"),
        Ok(Err(e)) => {
            log::error!("prediction task failed: {e}");
            error(StatusCode::INTERNAL_SERVER_ERROR, "internal error")
        }
        Ok(Ok(Ok(resp))) => Json(resp).into_response(),
        Ok(Ok(Err(e))) => match e.root() {
            Error::ZeroVector { .. } | Error::NonFinite { .. } => {
                error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
            }
            _ => error(StatusCode::BAD_REQUEST, e.to_string()),
        },
    }
}

pub fn router(index: CorpusIndex, cfg: &ServiceConfig) -> Router {
    let state = Arc::new(AppState {
        index,
        fusion: cfg.fusion.clone(),
        timeout: cfg.request_timeout,
    });
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/predict", post(predict_handler))
        .layer(DefaultBodyLimit::max(cfg.max_body_bytes))
        .with_state(state)
}

/// Serves on an already-bound listener until `shutdown` resolves, then
/// drains in-flight requests.
pub async fn serve_on<F>(
    listener: TcpListener,
    index: CorpusIndex,
    cfg: &ServiceConfig,
    shutdown: F,
) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    let app = router(index, cfg);
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

/// Binds `cfg.bind` and serves until Ctrl-C or SIGTERM.
pub async fn serve(index: CorpusIndex, cfg: ServiceConfig) -> std::io::Result<()> {
    let listener = TcpListener::bind(cfg.bind).await?;
    log::info!(
        "serving {} prompts (clip dim {}) on {}",
        index.len(),
        index.clip_dim(),
        listener.local_addr()?
    );
    serve_on(listener, index, &cfg, shutdown_signal()).await
}

async fn shutdown_signal() {
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
    log::info!("shutdown requested, draining in-flight requests");
}

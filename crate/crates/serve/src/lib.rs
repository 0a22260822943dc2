//! HTTP inference service. Holds one immutable [`Snapshot`] behind an `Arc`; a reload
//! builds the replacement off to the side and swaps the pointer, so every request is
//! answered entirely by the snapshot it started with.
//!
//! | Method | Path             | Body                                 |
//! |--------|------------------|--------------------------------------|
//! | POST   | `/v1/embed`      | [`EmbedRequest`]                     |
//! | POST   | `/v1/recommend`  | [`RecommendRequest`]                 |
//! | POST   | `/admin/reload`  | [`ReloadRequest`] (may be empty)     |
//! | GET    | `/health`        |                                      |

pub mod api;
pub mod snapshot;

use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::Response;
use axum::routing::{get, post};
use axum::Router;
use tokio::net::TcpListener;

pub use api::{
    ApiError, EmbedRequest, EmbedResponse, HealthResponse, RecommendRequest, RecommendResponse, ReloadRequest,
    ReloadResponse, UserInput, WireEvent,
};
pub use snapshot::{Snapshot, Stamps};

use api::{json_response, parse_body};

pub const LISTEN_ENV: &str = "COLDSTART_LISTEN";
pub const SNAPSHOT_ENV: &str = "COLDSTART_SNAPSHOT";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Core(#[from] coldstart_core::Error),
    #[error("server io: {0}")]
    Io(#[from] std::io::Error),
}

pub struct AppState {
    snapshot: RwLock<Option<Arc<Snapshot>>>,
    /// Serializes reloads; requests never wait on it.
    reload: tokio::sync::Mutex<()>,
    started: Instant,
}

impl AppState {
    pub fn empty() -> Self {
        AppState {
            snapshot: RwLock::new(None),
            reload: tokio::sync::Mutex::new(()),
            started: Instant::now(),
        }
    }

    pub fn with_snapshot(snapshot: Snapshot) -> Self {
        let s = AppState::empty();
        s.install(snapshot);
        s
    }

    /// Snapshot every part of a request is answered from.
    pub fn current(&self) -> Option<Arc<Snapshot>> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn install(&self, snapshot: Snapshot) -> Option<Arc<Snapshot>> {
        self.snapshot
            .write()
            .expect("snapshot lock")
            .replace(Arc::new(snapshot))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/embed", post(embed))
        .route("/v1/recommend", post(recommend))
        .route("/admin/reload", post(reload))
        .route("/health", get(health))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await?;
    Ok(())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
}

async fn embed(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: EmbedRequest = parse_body(&body)?;
    let input = req.to_input()?;
    let snap = state.current().ok_or_else(ApiError::unavailable)?;
    let out = blocking(move || {
        let embedding = snap.embed(&input)?;
        Ok(EmbedResponse {
            snapshot_version: snap.version.clone(),
            embedding,
        })
    })
    .await?;
    Ok(json_response(StatusCode::OK, &out))
}

async fn recommend(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: RecommendRequest = parse_body(&body)?;
    let (strategy, k) = req.options()?;
    let input = req.user.to_input()?;
    let user_id = req.user.user_id;
    let snap = state.current().ok_or_else(ApiError::unavailable)?;
    let out = blocking(move || {
        let rec = snap.recommend(&input, strategy, k)?;
        Ok(RecommendResponse::new(&rec, &snap, user_id))
    })
    .await?;
    Ok(json_response(StatusCode::OK, &out))
}

async fn reload(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: ReloadRequest = if body.iter().all(u8::is_ascii_whitespace) {
        ReloadRequest { dir: None }
    } else {
        parse_body(&body)?
    };
    let _guard = state.reload.lock().await;
    let old = state.current();
    let dir = match (req.dir, &old) {
        (Some(d), _) => PathBuf::from(d),
        (None, Some(s)) => s.dir.clone(),
        (None, None) => {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "no snapshot directory given and none loaded",
            ))
        }
    };
    let loaded = tokio::task::spawn_blocking(move || Snapshot::load(&dir))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?;
    let snapshot = loaded.map_err(|e| {
        log::warn!("reload refused: {e}");
        ApiError::new(StatusCode::CONFLICT, format!("reload refused, keeping current snapshot: {e}"))
    })?;
    let new_version = snapshot.version.clone();
    let previous = state.install(snapshot);
    log::info!(
        "snapshot {} -> {new_version}",
        previous.as_ref().map_or("none", |s| s.version.as_str())
    );
    Ok(json_response(
        StatusCode::OK,
        &ReloadResponse {
            old_version: old.map(|s| s.version.clone()),
            new_version,
        },
    ))
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let snap = state.current();
    json_response(
        StatusCode::OK,
        &HealthResponse {
            status: if snap.is_some() { "ok" } else { "degraded" }.to_string(),
            snapshot_version: snap.map(|s| s.version.clone()),
            uptime_seconds: state.started.elapsed().as_secs(),
        },
    )
}

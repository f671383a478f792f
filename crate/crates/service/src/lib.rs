//! HTTP and WebSocket front end for the mlscope engines.
//!
//! Training sessions step in the background and stream snapshots over
//! `/sessions/{id}/stream`; image decompositions run as jobs on a bounded
//! worker pool; audio analysis answers inline.

pub mod error;
pub mod jobs;
pub mod sessions;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{DefaultBodyLimit, FromRequest, FromRequestParts, Path, Request, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mlscope_core::audio::{analyze, decode_wav, AnalysisParams, AudioError};
use mlscope_core::isochrome::{decode_image, IsochromeError, KMeansParams};
use mlscope_core::qlearn::{
    builtin_level, GridEdit, GridWorld, LevelFile, RewardSpec, TrainingConfig, LEVEL_COUNT,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::broadcast::error::RecvError;

pub use error::{ApiError, ErrorBody};
pub use jobs::{JobQueue, JobResult, JobState, LayerImage};
pub use sessions::{ControlCommand, Emission, SessionHandle, SessionManager, SessionView};

pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;
pub const MAX_AUDIO_SECONDS: f64 = 120.0;
pub const MAX_K: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub workers: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            workers: 2,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub sessions: Arc<SessionManager>,
    pub jobs: Arc<JobQueue>,
}

impl AppState {
    pub fn new(workers: usize) -> Self {
        Self {
            sessions: Arc::new(SessionManager::new()),
            jobs: Arc::new(JobQueue::new(workers)),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/levels", get(list_levels))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/control", post(control_session))
        .route("/sessions/{id}/grid", axum::routing::put(edit_grid))
        .route("/sessions/{id}/qtable", get(get_qtable))
        .route("/sessions/{id}/stream", get(stream_session))
        .route("/isochrome/jobs", post(submit_job))
        .route("/isochrome/jobs/{id}", get(get_job))
        .route("/haptics/analyze", post(analyze_audio))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

/// Binds `config.host:config.port` and serves in a background task.
/// Returns the bound address, which matters when the port is 0.
pub async fn spawn(config: &ServiceConfig) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind((config.host.as_str(), config.port)).await?;
    let addr = listener.local_addr()?;
    let app = router(AppState::new(config.workers));
    tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("server stopped: {e}");
        }
    });
    Ok(addr)
}

/// Serves until the process is stopped.
pub async fn serve(config: &ServiceConfig) -> std::io::Result<()> {
    let listener = TcpListener::bind((config.host.as_str(), config.port)).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(config.workers))).await
}

/// `Json` whose rejections use the service error body.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| ApiJson(v))
            .map_err(|e| ApiError::malformed(e.body_text()))
    }
}

pub struct ApiQuery<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for ApiQuery<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        axum::extract::Query::<T>::from_request_parts(parts, state)
            .await
            .map(|q| ApiQuery(q.0))
            .map_err(|e| ApiError::malformed(e.body_text()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelInfo {
    pub id: u32,
    pub name: String,
    pub grid: LevelFile,
    pub config: TrainingConfig,
}

async fn list_levels() -> Result<Json<Vec<LevelInfo>>, ApiError> {
    let mut out = Vec::new();
    for n in 1..=LEVEL_COUNT {
        let l = builtin_level(n)?;
        out.push(LevelInfo {
            id: l.id,
            name: l.name.to_string(),
            grid: l.grid.to_level_file(),
            config: l.config,
        });
    }
    Ok(Json(out))
}

/// Exactly one of `level` and `grid`. A level supplies its own training
/// config unless `config` overrides it.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub level: Option<u32>,
    #[serde(default)]
    pub grid: Option<LevelFile>,
    #[serde(default)]
    pub config: Option<TrainingConfig>,
    #[serde(default)]
    pub rewards: Option<RewardSpec>,
    #[serde(default)]
    pub speed: Option<u32>,
}

async fn create_session(
    State(state): State<AppState>,
    ApiJson(req): ApiJson<CreateSession>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let (grid, level_config) = match (req.level, &req.grid) {
        (Some(n), None) => {
            let l = builtin_level(n)?;
            (l.grid, Some(l.config))
        }
        (None, Some(file)) => (GridWorld::from_level_file(file)?, None),
        _ => return Err(ApiError::malformed("give exactly one of 'level' and 'grid'")),
    };
    let config = req.config.or(level_config).unwrap_or_default();
    let entry = state.sessions.create(
        grid,
        config,
        req.rewards.unwrap_or_default(),
        req.speed.unwrap_or(sessions::DEFAULT_SPEED),
    )?;
    Ok((StatusCode::CREATED, Json(entry.view())))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(state.sessions.get(&id)?.view()))
}

async fn control_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
    ApiJson(cmd): ApiJson<ControlCommand>,
) -> Result<Json<SessionHandle>, ApiError> {
    Ok(Json(state.sessions.get(&id)?.control(cmd)?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridEdits {
    pub edits: Vec<GridEdit>,
}

async fn edit_grid(
    State(state): State<AppState>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<GridEdits>,
) -> Result<Json<LevelFile>, ApiError> {
    let grid = state.sessions.get(&id)?.update_grid(&body.edits)?;
    Ok(Json(grid.to_level_file()))
}

/// Q-values per cell in row-major order, one entry per action in `actions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTableView {
    pub width: usize,
    pub height: usize,
    pub actions: [String; 4],
    pub values: Vec<[f64; 4]>,
}

async fn get_qtable(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<QTableView>, ApiError> {
    Ok(Json(state.sessions.get(&id)?.qtable_view()))
}

async fn stream_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let entry = state.sessions.get(&id)?;
    Ok(ws.on_upgrade(move |socket| pump(socket, entry)))
}

/// Sends the current snapshot, then every newer one in order. A subscriber
/// that falls behind skips straight to the newest snapshot.
async fn pump(mut socket: WebSocket, entry: Arc<sessions::SessionEntry>) {
    let (mut rx, first) = entry.subscribe();
    let mut last = first.seq;
    if socket.send(Message::Text(first.json.as_str().into())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            r = rx.recv() => {
                let e = match r {
                    Ok(e) => e,
                    Err(RecvError::Lagged(_)) => {
                        rx = rx.resubscribe();
                        entry.latest()
                    }
                    Err(RecvError::Closed) => break,
                };
                if e.seq <= last {
                    continue;
                }
                last = e.seq;
                if socket.send(Message::Text(e.json.as_str().into())).await.is_err() {
                    break;
                }
            }
            msg = socket.recv() => match msg {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => break,
                Some(Ok(_)) => {}
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct JobQuery {
    pub k: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobTicket {
    pub job_id: String,
    pub status: String,
}

async fn submit_job(
    State(state): State<AppState>,
    ApiQuery(q): ApiQuery<JobQuery>,
    body: Bytes,
) -> Result<(StatusCode, Json<JobTicket>), ApiError> {
    let k = q.k.unwrap_or(mlscope_core::isochrome::DEFAULT_K);
    if !(1..=MAX_K).contains(&k) {
        return Err(IsochromeError::InvalidK.into());
    }
    let raster = decode_image(&body)?;
    let params = KMeansParams {
        k,
        seed: q.seed.unwrap_or(0),
        ..KMeansParams::default()
    };
    let job_id = state.jobs.submit(raster, params);
    Ok((
        StatusCode::ACCEPTED,
        Json(JobTicket {
            job_id,
            status: "pending".into(),
        }),
    ))
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    match state.jobs.get(&id)? {
        JobState::Pending => Err(ApiError::new(StatusCode::CONFLICT, "JobPending", "job is still running")),
        JobState::Done(r) => Ok(Json(r.as_ref()).into_response()),
        JobState::Failed(e) => Err(e),
    }
}

async fn analyze_audio(body: Bytes) -> Result<Response, ApiError> {
    let buffer = decode_wav(&body)?;
    let seconds = buffer.duration();
    if seconds > MAX_AUDIO_SECONDS {
        return Err(AudioError::AudioTooLong {
            seconds,
            limit: MAX_AUDIO_SECONDS,
        }
        .into());
    }
    let script = tokio::task::spawn_blocking(move || analyze(&buffer, &AnalysisParams::default()))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))??;
    let text = script.to_records("upload");
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

//! HTTP session service: create sessions from one RGB-D view, submit steps,
//! fetch read-only renders and export scenes.
//!
//! Steps on one session are mutually exclusive (an overlapping step gets
//! 409); renders and reads wait for an in-flight step to finish. Distinct
//! sessions run independently. CPU work runs on the blocking pool.

pub mod config;
pub mod error;
pub mod payload;

use std::collections::HashMap;
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use splatloop::gaussians::encode_ply;
use splatloop::imaging::{encode_depth, encode_png};
use splatloop::{Pipeline, PipelineConfig, SessionState, StepTiming};
use tokio::sync::Mutex;

pub use crate::config::ServiceConfig;
use crate::error::ApiError;
use crate::payload::{multipart, parse_create, parse_step, pose_query, Part};

#[derive(Debug, Clone, Serialize)]
pub struct SessionHandle {
    pub id: String,
    /// Unix time in milliseconds.
    pub created_at: u64,
    pub config: PipelineConfig,
}

struct Live {
    state: SessionState,
    /// PNG of the pre-fusion render of every accepted step, in order.
    frames: Vec<Vec<u8>>,
}

struct Session {
    handle: SessionHandle,
    live: Arc<Mutex<Live>>,
}

struct Shared {
    config: ServiceConfig,
    pipeline: Arc<Pipeline>,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

#[derive(Clone)]
pub struct AppState {
    shared: Arc<Shared>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self::with_pipeline(config, Pipeline::default())
    }

    /// A service backed by a specific pipeline (e.g. another inpainter).
    pub fn with_pipeline(config: ServiceConfig, pipeline: Pipeline) -> Self {
        Self { shared: Arc::new(Shared { config, pipeline: Arc::new(pipeline), sessions: RwLock::new(HashMap::new()) }) }
    }

    pub fn session_count(&self) -> usize {
        self.shared.sessions.read().expect("session map lock").len()
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.shared.sessions.read().expect("session map lock").get(id).cloned().ok_or_else(|| ApiError::not_found(id))
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.shared.config.body_limit();
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}", get(session_metadata).delete(delete_session))
        .route("/session/{id}/step", post(post_step))
        .route("/session/{id}/render", get(get_render))
        .route("/session/{id}/export.ply", get(export_scene))
        .route("/session/{id}/frames/{file}", get(get_frame))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Binds `config.bind` and serves until the process ends.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(&config.bind).await?;
    axum::serve(listener, router(AppState::new(config))).await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let max_pixels = app.shared.config.max_image_pixels;
    let req = parse_create(&body, max_pixels)?;
    let cap = app.shared.config.max_sessions;
    if app.session_count() >= cap {
        return Err(ApiError::status(StatusCode::SERVICE_UNAVAILABLE, format!("session limit of {cap} reached")));
    }
    let pipeline = app.shared.pipeline.clone();
    let state = blocking(move || pipeline.init_session(&req.image, &req.depth, &req.pose, &req.intrinsics, req.config))
        .await?
        .map_err(|e| ApiError::pipeline(&e))?;

    let id = uuid::Uuid::new_v4().simple().to_string();
    let handle = SessionHandle { id: id.clone(), created_at: now_ms(), config: state.config.clone() };
    let gaussian_count = state.global.len();
    let step_count = state.step_count;
    let session = Arc::new(Session { handle: handle.clone(), live: Arc::new(Mutex::new(Live { state, frames: Vec::new() })) });
    {
        let mut sessions = app.shared.sessions.write().expect("session map lock");
        if sessions.len() >= cap {
            return Err(ApiError::status(StatusCode::SERVICE_UNAVAILABLE, format!("session limit of {cap} reached")));
        }
        sessions.insert(id.clone(), session);
    }
    let body = json!({
        "id": handle.id,
        "created_at": handle.created_at,
        "config": handle.config,
        "gaussian_count": gaussian_count,
        "step_count": step_count,
    });
    Ok((StatusCode::CREATED, [(header::LOCATION, format!("/session/{id}"))], Json(body)).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Aggregate {
    pub geometry_ms: f64,
    pub appearance_ms: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StepResponse {
    /// 1-based index of this step among the session's accepted steps.
    pub step: usize,
    pub frame_url: String,
    pub timing: StepTiming,
    pub aggregate: Aggregate,
    pub gaussian_count: usize,
    pub added: usize,
    pub hole_pixels: usize,
    pub step_count: u64,
}

async fn post_step(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<StepResponse>, ApiError> {
    let session = app.session(&id)?;
    let req = parse_step(&body)?;
    let mut live = session
        .live
        .clone()
        .try_lock_owned()
        .map_err(|_| ApiError::status(StatusCode::CONFLICT, "a step is already in flight for this session"))?;
    let pipeline = app.shared.pipeline.clone();
    let done = blocking(move || -> Result<StepResponse, ApiError> {
        let out = pipeline.step(&mut live.state, &req.pose, &req.prompt).map_err(|e| ApiError::pipeline(&e))?;
        live.frames.push(encode_png(&out.render.color));
        let step = live.frames.len();
        Ok(StepResponse {
            step,
            frame_url: format!("/session/{id}/frames/{step}.png"),
            aggregate: Aggregate { geometry_ms: out.timing.geometry_ms(), appearance_ms: out.timing.appearance_ms() },
            timing: out.timing,
            gaussian_count: live.state.global.len(),
            added: out.added,
            hole_pixels: out.hole_pixels,
            step_count: live.state.step_count,
        })
    })
    .await??;
    Ok(Json(done))
}

#[derive(Debug, Deserialize)]
struct RenderQuery {
    pose: Option<String>,
}

async fn get_render(State(app): State<AppState>, Path(id): Path<String>, Query(q): Query<RenderQuery>) -> Result<Response, ApiError> {
    let session = app.session(&id)?;
    let pose = pose_query(q.pose.as_deref())?;
    let live = session.live.clone().lock_owned().await;
    let (ct, body) = blocking(move || {
        let out = live.state.render(&pose);
        let png = encode_png(&out.color);
        let pfm = encode_depth(&out.depth);
        multipart(&[
            Part { name: "frame", filename: "frame.png", content_type: "image/png", bytes: &png },
            Part { name: "depth", filename: "depth.pfm", content_type: "image/x-portable-floatmap", bytes: &pfm },
        ])
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, ct)], body).into_response())
}

async fn export_scene(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = app.session(&id)?;
    let live = session.live.clone().lock_owned().await;
    let bytes = blocking(move || encode_ply(&live.state.global)).await?.map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream"), (header::CONTENT_DISPOSITION, "attachment; filename=\"scene.ply\"")], bytes)
        .into_response())
}

async fn session_metadata(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let session = app.session(&id)?;
    let live = session.live.lock().await;
    let s = &live.state;
    Ok(Json(json!({
        "id": session.handle.id,
        "created_at": session.handle.created_at,
        "step_count": s.step_count,
        "prompts": s.prompts,
        "config": s.config,
        "intrinsics": s.intrinsics,
        "gaussian_count": s.global.len(),
        "memory_entries": s.memory.len(),
        "frames": live.frames.len(),
    })))
}

async fn get_frame(State(app): State<AppState>, Path((id, file)): Path<(String, String)>) -> Result<Response, ApiError> {
    let session = app.session(&id)?;
    let missing = || ApiError::status(StatusCode::NOT_FOUND, format!("no frame `{file}`"));
    let n: usize = file.strip_suffix(".png").and_then(|n| n.parse().ok()).ok_or_else(missing)?;
    let live = session.live.lock().await;
    let png = n.checked_sub(1).and_then(|i| live.frames.get(i)).ok_or_else(missing)?.clone();
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn delete_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    let session = app.session(&id)?;
    // Wait out any in-flight step so its response still refers to a live session.
    let _live = session.live.lock().await;
    app.shared.sessions.write().expect("session map lock").remove(&id);
    Ok(StatusCode::NO_CONTENT)
}

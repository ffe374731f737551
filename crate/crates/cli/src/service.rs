//! Local HTTP API for exploring hypothetical camera motion from a dataset
//! frame. All bodies are JSON; errors are `{"code", "message"}`.
//!
//! Each session keeps the accumulated motion as a rigid transform and always
//! warps the original frame with it.
//!
//! The depth image encodes inverse depth on a red ramp: a covered pixel at
//! depth `d` is `(round(255 · min(1, d_min / d)), 0, 0)` with `d_min = 3 m`,
//! clamped to at least 1; uncovered pixels are black. Decode with
//! `d = d_min · 255 / red`.

use std::collections::HashMap;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex as StdMutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use geoframe::depth_data::io::read_video_dir;
use geoframe::geometry::{CameraIntrinsics, DepthMap, EgoMotion, RigidTransform};
use geoframe::synthesis::{warp_forward, SplatConfig};
use geoframe::FORMAT_VERSION;
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use crate::args::ServeArgs;
use crate::{CliError, Result};

/// Nearest depth of the colormap's full-intensity end, in metres.
pub const COLORMAP_D_MIN: f64 = 3.0;

pub fn depth_colormap(depth: &DepthMap) -> RgbImage {
    RgbImage::from_fn(depth.width as u32, depth.height as u32, |x, y| {
        let i = depth.index(x as usize, y as usize);
        if !depth.mask[i] {
            return Rgb([0, 0, 0]);
        }
        let red = (255.0 * (COLORMAP_D_MIN / depth.values[i]).min(1.0)).round().max(1.0);
        Rgb([red as u8, 0, 0])
    })
}

/// Depth encoded by a colormap pixel; `None` for uncovered pixels.
pub fn decode_colormap(pixel: [u8; 3]) -> Option<f64> {
    (pixel[0] > 0).then(|| COLORMAP_D_MIN * 255.0 / pixel[0] as f64)
}

pub struct FrameEntry {
    pub video: String,
    pub index: usize,
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub k: CameraIntrinsics,
}

struct Session {
    frame: usize,
    accumulated: RigidTransform,
    history: Vec<EgoMotion>,
}

pub struct AppState {
    frames: Vec<FrameEntry>,
    sessions: StdMutex<HashMap<u64, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(frames: Vec<FrameEntry>) -> Self {
        AppState { frames, sessions: StdMutex::new(HashMap::new()), next_id: AtomicU64::new(1) }
    }

    /// Every frame of one video directory, or of every video directory
    /// directly under `root` (sorted by name).
    pub fn load(root: &Path) -> Result<Self> {
        let dirs: Vec<PathBuf> = if root.join("poses.csv").exists() {
            vec![root.to_path_buf()]
        } else {
            let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join("poses.csv").exists())
                .collect();
            dirs.sort();
            dirs
        };
        let mut frames = Vec::new();
        for dir in dirs {
            let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let (video, k) = read_video_dir(&dir)?;
            for (index, f) in video.into_iter().enumerate() {
                frames.push(FrameEntry { video: name.clone(), index, rgb: f.rgb, depth: f.depth, k });
            }
        }
        if frames.is_empty() {
            return Err(geoframe::Error::Format(format!("no frames under {}", root.display())).into());
        }
        Ok(Self::new(frames))
    }

    fn session(&self, id: &str) -> std::result::Result<(u64, Arc<Mutex<Session>>), ApiError> {
        let missing = || ApiError::not_found(format!("no session {id}"));
        let id: u64 = id.parse().map_err(|_| missing())?;
        let sessions = self.sessions.lock().expect("session map lock");
        sessions.get(&id).cloned().map(|s| (id, s)).ok_or_else(missing)
    }
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn not_found(message: String) -> Self {
        ApiError { status: StatusCode::NOT_FOUND, code: "not_found", message }
    }

    fn bad_request(message: String) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, code: "bad_request", message }
    }

    fn numeric(message: String) -> Self {
        ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, code: "numeric_failure", message }
    }

    fn internal(message: String) -> Self {
        ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, code: "internal", message }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct FrameInfo {
    pub id: usize,
    pub video: String,
    pub index: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FrameList {
    pub version: u32,
    pub frames: Vec<FrameInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateSession {
    pub frame: usize,
}

/// A rendered view of a session.
#[derive(Debug, Serialize, Deserialize)]
pub struct View {
    pub version: u32,
    pub session: u64,
    pub frame: usize,
    /// Base64 PNG of the warped RGB frame.
    pub rgb_png: String,
    /// Base64 PNG of the warped depth on the red inverse-depth ramp.
    pub depth_png: String,
    pub coverage: f64,
    /// Warped depth at the centre pixel, in metres.
    pub center_depth: Option<f64>,
    pub accumulated: EgoMotion,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionState {
    pub version: u32,
    pub session: u64,
    pub frame: usize,
    pub accumulated: EgoMotion,
    pub history: Vec<EgoMotion>,
}

fn png_base64(img: &RgbImage) -> std::result::Result<String, ApiError> {
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(BASE64.encode(bytes))
}

fn numeric_or_internal(e: geoframe::Error) -> ApiError {
    match e {
        geoframe::Error::Numeric(_) | geoframe::Error::OutOfRange(_) => ApiError::numeric(e.to_string()),
        _ => ApiError::internal(e.to_string()),
    }
}

/// Warps the session's original frame by `accumulated`.
async fn render(state: &Arc<AppState>, id: u64, frame: usize, accumulated: EgoMotion) -> ApiResult<View> {
    let state = state.clone();
    let view = tokio::task::spawn_blocking(move || {
        let f = &state.frames[frame];
        let p = warp_forward(&f.rgb, &f.depth, &accumulated, &f.k, &SplatConfig::default())
            .map_err(numeric_or_internal)?;
        let centre = p.depth.index(f.k.width / 2, f.k.height / 2);
        Ok(View {
            version: FORMAT_VERSION,
            session: id,
            frame,
            rgb_png: png_base64(&p.rgb)?,
            depth_png: png_base64(&depth_colormap(&p.depth))?,
            coverage: p.coverage_fraction(),
            center_depth: p.depth.mask[centre].then(|| p.depth.values[centre]),
            accumulated,
        })
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?;
    view.map(Json)
}

fn components(t: &RigidTransform) -> std::result::Result<EgoMotion, ApiError> {
    EgoMotion::from_camera_transform(t).map_err(numeric_or_internal)
}

async fn list_frames(State(state): State<Arc<AppState>>) -> Json<FrameList> {
    let frames = state
        .frames
        .iter()
        .enumerate()
        .map(|(id, f)| FrameInfo { id, video: f.video.clone(), index: f.index, width: f.k.width, height: f.k.height })
        .collect();
    Json(FrameList { version: FORMAT_VERSION, frames })
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: std::result::Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<View> {
    let Json(req) = body?;
    if req.frame >= state.frames.len() {
        return Err(ApiError::not_found(format!("no frame {}", req.frame)));
    }
    let id = state.next_id.fetch_add(1, Ordering::Relaxed);
    let session = Session { frame: req.frame, accumulated: RigidTransform::identity(), history: Vec::new() };
    state.sessions.lock().expect("session map lock").insert(id, Arc::new(Mutex::new(session)));
    render(&state, id, req.frame, EgoMotion::zero()).await
}

async fn apply_motion(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: std::result::Result<Json<EgoMotion>, JsonRejection>,
) -> ApiResult<View> {
    let (id, session) = state.session(&id)?;
    let Json(motion) = body?;
    if !motion.is_finite() {
        return Err(ApiError::bad_request("motion components must be finite".into()));
    }
    let mut s = session.lock().await;
    let next = s.accumulated.compose(&motion.camera_transform());
    let accumulated = components(&next)?;
    let view = render(&state, id, s.frame, accumulated).await?;
    s.accumulated = next;
    s.history.push(motion);
    Ok(view)
}

async fn reset(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<View> {
    let (id, session) = state.session(&id)?;
    let mut s = session.lock().await;
    s.accumulated = RigidTransform::identity();
    s.history.clear();
    render(&state, id, s.frame, EgoMotion::zero()).await
}

async fn session_state(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<SessionState> {
    let (id, session) = state.session(&id)?;
    let s = session.lock().await;
    Ok(Json(SessionState {
        version: FORMAT_VERSION,
        session: id,
        frame: s.frame,
        accumulated: components(&s.accumulated)?,
        history: s.history.clone(),
    }))
}

async fn unknown_route() -> ApiError {
    ApiError::not_found("no such endpoint".into())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/frames", get(list_frames))
        .route("/session", post(create_session))
        .route("/session/{id}/motion", post(apply_motion))
        .route("/session/{id}/reset", post(reset))
        .route("/session/{id}/state", get(session_state))
        .fallback(unknown_route)
        .with_state(state)
}

pub fn serve(a: &ServeArgs) -> Result<()> {
    let state = Arc::new(AppState::load(&a.data)?);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        eprintln!("serving {} frames on http://{}", state.frames.len(), listener.local_addr()?);
        axum::serve(listener, router(state)).await.map_err(CliError::from)
    })
}

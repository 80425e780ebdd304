//! HTTP generation service: sessions, clip-by-clip generation and timelines.
//!
//! One immutable model is shared by every request. Each session sits behind
//! its own async mutex, so overlapping generations on one session run one
//! after the other while different sessions proceed independently. Sessions
//! are written to disk after every change and reloaded on start.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use motion_core::features::{recover_motion, Anchor, MotionFeatures};
use motion_core::session::SessionState;

use crate::generate::{GenerateError, Generator};
use crate::request::{FieldError, ResolvedRequest, TaskChoice, TaskParams, DEFAULT_FRAMES};
use crate::store::{check_id, ClipStore};

pub const DEFAULT_IDLE: Duration = Duration::from_secs(30 * 60);
/// Stitched root path keeps every this many frames, plus the last.
pub const TIMELINE_STRIDE: usize = 5;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status: status.as_u16(), code: code.into(), message: message.into(), fields: Vec::new() }
    }

    fn validation(fields: Vec<FieldError>) -> Self {
        let mut e = Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation_failed", crate::request::describe(&fields));
        e.fields = fields;
        e
    }

    fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session '{id}'"))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ApiSession {
    pub state: SessionState,
    pub created_unix: u64,
    pub last_active_unix: u64,
}

pub struct AppState {
    generator: Arc<Generator>,
    store: ClipStore,
    sessions_dir: Option<PathBuf>,
    idle: Duration,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<ApiSession>>>>,
}

impl AppState {
    /// Loads persisted sessions from `sessions_dir` when given.
    pub fn new(generator: Generator, store: ClipStore, sessions_dir: Option<PathBuf>, idle: Duration) -> anyhow::Result<Arc<Self>> {
        let mut sessions = BTreeMap::new();
        if let Some(dir) = &sessions_dir {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
            paths.sort();
            for p in paths.into_iter().filter(|p| p.extension().is_some_and(|e| e == "json")) {
                let s: ApiSession = serde_json::from_slice(&std::fs::read(&p)?).with_context(|| format!("loading session {}", p.display()))?;
                sessions.insert(s.state.id.clone(), Arc::new(Mutex::new(s)));
            }
            log::info!("restored {} sessions from {}", sessions.len(), dir.display());
        }
        Ok(Arc::new(Self { generator: Arc::new(generator), store, sessions_dir, idle, sessions: RwLock::new(sessions) }))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<ApiSession>>, ApiError> {
        self.sessions.read().expect("session registry poisoned").get(id).cloned().ok_or_else(|| ApiError::unknown_session(id))
    }

    fn session_path(&self, id: &str) -> Option<PathBuf> {
        self.sessions_dir.as_ref().map(|d| d.join(format!("{id}.json")))
    }

    fn persist(&self, s: &ApiSession) -> Result<(), ApiError> {
        if let Some(p) = self.session_path(&s.state.id) {
            let bytes = serde_json::to_vec(s).map_err(ApiError::internal)?;
            crate::store::write_atomic(&p, &bytes).map_err(ApiError::internal)?;
        }
        Ok(())
    }

    /// Drops sessions idle for longer than the limit; busy sessions are kept.
    pub fn expire_idle(&self) -> usize {
        let limit = self.idle.as_secs();
        let now = now_unix();
        let mut reg = self.sessions.write().expect("session registry poisoned");
        let stale: Vec<String> = reg
            .iter()
            .filter(|(_, s)| s.try_lock().is_ok_and(|s| now.saturating_sub(s.last_active_unix) > limit))
            .map(|(id, _)| id.clone())
            .collect();
        for id in &stale {
            reg.remove(id);
            if let Some(p) = self.session_path(id) {
                let _ = std::fs::remove_file(p);
            }
        }
        stale.len()
    }
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    version: &'static str,
    checkpoint_sha256: String,
    skeleton: String,
}

async fn health(State(app): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok",
        version: env!("CARGO_PKG_VERSION"),
        checkpoint_sha256: app.generator.checksum.clone(),
        skeleton: app.generator.model.skeleton.name.clone(),
    })
}

#[derive(Serialize)]
struct SkeletonView {
    id: String,
    joint_names: Vec<String>,
    parents: Vec<i32>,
    edges: Vec<[usize; 2]>,
    key_joints: Vec<usize>,
    hand_joints: Vec<usize>,
    feature_dim: usize,
    fps: f64,
}

async fn skeleton(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<SkeletonView> {
    let s = &app.generator.model.skeleton;
    if s.name != id {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_skeleton", format!("no skeleton '{id}'; the model uses '{}'", s.name)));
    }
    Ok(Json(SkeletonView {
        id: s.name.clone(),
        joint_names: s.joint_names.clone(),
        parents: s.parents.clone(),
        edges: s.edges().into_iter().map(|(a, b)| [a, b]).collect(),
        key_joints: s.key_joints.clone(),
        hand_joints: s.hand_joints.clone(),
        feature_dim: s.feature_dim(),
        fps: motion_core::preprocess::TARGET_FPS,
    }))
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let body: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(body).map_err(|e| ApiError::validation(vec![FieldError::new("body", e.to_string())]))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub skeleton_id: String,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub skeleton_id: String,
    pub seed: u64,
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let req: CreateSession = parse_body(&body)?;
    let skel = &app.generator.model.skeleton;
    if req.skeleton_id != skel.name {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_skeleton",
            format!("skeleton '{}' is not served; the model uses '{}'", req.skeleton_id, skel.name),
        ));
    }
    let mut rng = rand::rngs::OsRng;
    let seed = req.seed.unwrap_or_else(|| rng.next_u64());
    let id = loop {
        let mut raw = [0u8; 16];
        rng.fill_bytes(&mut raw);
        let id = hex::encode(raw);
        if !app.sessions.read().expect("session registry poisoned").contains_key(&id) {
            break id;
        }
    };
    let now = now_unix();
    let s = ApiSession { state: SessionState::new(id.clone(), skel.name.clone(), seed), created_unix: now, last_active_unix: now };
    app.persist(&s)?;
    app.sessions.write().expect("session registry poisoned").insert(id.clone(), Arc::new(Mutex::new(s)));
    Ok((StatusCode::CREATED, Json(SessionCreated { session_id: id, skeleton_id: skel.name.clone(), seed })))
}

/// Body of a generate request. Attachments and clips are store ids.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratePayload {
    pub text: Option<String>,
    pub task: Option<String>,
    #[serde(default)]
    pub task_params: TaskParams,
    pub speech: Option<String>,
    pub music: Option<String>,
    pub reference_clip: Option<String>,
    pub global_clip: Option<String>,
    pub frames: Option<usize>,
    pub guidance: Option<f64>,
}

fn resolve(store: &ClipStore, p: &GeneratePayload) -> Result<(ResolvedRequest, Option<MotionFeatures>, f64), Vec<FieldError>> {
    let mut errs = Vec::new();
    let task = match &p.task {
        Some(t) => match t.parse::<TaskChoice>() {
            Ok(t) => Some(t),
            Err(e) => {
                errs.push(FieldError::new("task", e));
                None
            }
        },
        None => match (&p.speech, &p.music, &p.text) {
            (Some(_), None, _) => Some(TaskChoice::S2g),
            (None, Some(_), _) => Some(TaskChoice::M2d),
            (None, None, Some(_)) => Some(TaskChoice::T2m),
            (Some(_), Some(_), _) => None,
            (None, None, None) => {
                errs.push(FieldError::new("task", "give a task, a text prompt or an audio attachment"));
                None
            }
        },
    };
    let mut attachment = |field: &str, id: &Option<String>| {
        let id = id.as_ref()?;
        let read = check_id(id).and_then(|_| store.read_attachment(&format!("attachments/{id}.f32")));
        match read {
            Ok(m) => Some(m),
            Err(e) => {
                errs.push(FieldError::new(field, format!("attachment '{id}': {e:#}")));
                None
            }
        }
    };
    let speech = attachment("speech", &p.speech);
    let music = attachment("music", &p.music);
    let mut clip = |field: &str, id: &Option<String>| {
        let id = id.as_ref()?;
        match check_id(id).and_then(|_| store.read_clip(id)) {
            Ok(c) => Some(c.features),
            Err(e) => {
                errs.push(FieldError::new(field, format!("clip '{id}': {e:#}")));
                None
            }
        }
    };
    let reference = clip("reference_clip", &p.reference_clip);
    let global = clip("global_clip", &p.global_clip);
    if p.speech.is_some() && p.music.is_some() {
        errs.push(FieldError::new("speech", "speech and music are mutually exclusive"));
        errs.push(FieldError::new("music", "speech and music are mutually exclusive"));
    }
    let guidance = p.guidance.unwrap_or(1.0);
    if !(guidance.is_finite() && guidance >= 0.0) {
        errs.push(FieldError::new("guidance", "must be a finite non-negative number"));
    }
    match task {
        Some(task) if errs.is_empty() => {
            let req = ResolvedRequest {
                task,
                text: p.text.clone(),
                params: p.task_params.clone(),
                speech,
                music,
                global,
                frames: p.frames.unwrap_or(DEFAULT_FRAMES),
            };
            Ok((req, reference, guidance))
        }
        _ => Err(errs),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClipPayload {
    pub session_id: String,
    pub clip_id: String,
    pub index: usize,
    pub frames: usize,
    pub fps: f64,
    pub seed: u64,
    /// `frames x joints x 3` world positions.
    pub positions: Vec<Vec<[f64; 3]>>,
    pub features_ref: String,
}

fn clip_payload(app: &AppState, state: &SessionState, index: usize) -> Result<ClipPayload, ApiError> {
    let skel = &app.generator.model.skeleton;
    let c = &state.clips[index];
    let motion = recover_motion(&c.features, skel, c.start.yaw, [c.start.x, c.start.z]).map_err(ApiError::internal)?;
    let positions =
        motion.joint_positions(skel).map_err(ApiError::internal)?.into_iter().map(|f| f.into_iter().map(|p| p.to_array()).collect()).collect();
    Ok(ClipPayload {
        session_id: state.id.clone(),
        clip_id: format!("{}-{index:04}", state.id),
        index,
        frames: c.features.frames(),
        fps: c.features.fps,
        seed: c.seed,
        positions,
        features_ref: format!("/sessions/{}/clips/{index}/features", state.id),
    })
}

async fn generate_next(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<ClipPayload> {
    let entry = app.session(&id)?;
    let payload: GeneratePayload = parse_body(&body)?;
    let (req, reference, guidance) = resolve(&app.store, &payload).map_err(ApiError::validation)?;
    let mut guard = entry.lock().await;
    let generator = app.generator.clone();
    let mut state = guard.state.clone();
    let joined = tokio::task::spawn_blocking(move || {
        let r = match reference {
            Some(r) => generator.extend_with_reference(&mut state, &req, r, guidance),
            None => generator.extend(&mut state, &req, guidance),
        };
        r.map(|_| state)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "generation_failed", format!("worker panicked: {e}")))?;
    let state = joined.map_err(|e| match e {
        GenerateError::Invalid(fields) => ApiError::validation(fields),
        GenerateError::Failed(msg) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "generation_failed", msg),
    })?;
    guard.state = state;
    guard.last_active_unix = now_unix();
    app.persist(&guard)?;
    let index = guard.state.clips.len() - 1;
    Ok(Json(clip_payload(&app, &guard.state, index)?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FeaturesPayload {
    pub fps: f64,
    pub frames: usize,
    pub dim: usize,
    pub values: Vec<Vec<f64>>,
}

async fn clip_features(State(app): State<Arc<AppState>>, UrlPath((id, index)): UrlPath<(String, usize)>) -> ApiResult<FeaturesPayload> {
    let entry = app.session(&id)?;
    let guard = entry.lock().await;
    let c = guard.state.clips.get(index).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_clip", format!("session '{id}' has no clip {index}")))?;
    let f = &c.features;
    Ok(Json(FeaturesPayload { fps: f.fps, frames: f.frames(), dim: f.dim(), values: (0..f.frames()).map(|i| f.frame(i).to_vec()).collect() }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TimelineClip {
    pub index: usize,
    pub clip_id: String,
    pub caption: Option<String>,
    pub task: Option<String>,
    pub frames: usize,
    pub seed: u64,
    pub start: Anchor,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Timeline {
    pub session_id: String,
    pub clips: Vec<TimelineClip>,
    pub total_frames: usize,
    pub root_path_stride: usize,
    /// Stitched root positions, every `root_path_stride` frames plus the last.
    pub root_path: Vec<[f64; 3]>,
}

async fn timeline(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Timeline> {
    let entry = app.session(&id)?;
    let guard = entry.lock().await;
    let st = &guard.state;
    let clips = st
        .clips
        .iter()
        .enumerate()
        .map(|(i, c)| TimelineClip {
            index: i,
            clip_id: format!("{}-{i:04}", st.id),
            caption: c.caption.clone(),
            task: c.task.clone(),
            frames: c.features.frames(),
            seed: c.seed,
            start: c.start,
        })
        .collect();
    let mut root_path = Vec::new();
    if !st.clips.is_empty() {
        let m = st.stitch(&app.generator.model.skeleton).map_err(ApiError::internal)?;
        let n = m.root_translation.len();
        for i in (0..n).step_by(TIMELINE_STRIDE).chain((n % TIMELINE_STRIDE != 1).then_some(n - 1)) {
            root_path.push(m.root_translation[i].to_array());
        }
    }
    Ok(Json(Timeline { session_id: st.id.clone(), clips, total_frames: st.total_frames(), root_path_stride: TIMELINE_STRIDE, root_path }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AttachmentStored {
    pub id: String,
    pub rows: usize,
    pub cols: usize,
}

/// Stores an encoded feature matrix as a clip-store attachment.
async fn put_attachment(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<AttachmentStored> {
    check_id(&id).map_err(|e| ApiError::validation(vec![FieldError::new("id", e.to_string())]))?;
    let m = crate::clip::decode_matrix(&body).map_err(|e| ApiError::validation(vec![FieldError::new("body", e.to_string())]))?;
    let store = app.store.clone();
    let name = id.clone();
    let (rows, cols) = m.shape();
    tokio::task::spawn_blocking(move || -> anyhow::Result<()> {
        let lock = store.lock()?;
        store.write_attachment(&lock, &name, &m)?;
        Ok(())
    })
    .await
    .map_err(ApiError::internal)?
    .map_err(|e| ApiError::new(StatusCode::CONFLICT, "store_busy", format!("{e:#}")))?;
    Ok(Json(AttachmentStored { id, rows, cols }))
}

pub fn router(app: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let r = Router::new()
        .route("/health", get(health))
        .route("/skeletons/{id}", get(skeleton))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/generate", post(generate_next))
        .route("/sessions/{id}/timeline", get(timeline))
        .route("/sessions/{id}/clips/{index}/features", get(clip_features))
        .route("/attachments/{id}", axum::routing::put(put_attachment))
        .with_state(app);
    match static_dir {
        Some(d) => r.fallback_service(tower_http::services::ServeDir::new(d)),
        None => r,
    }
}

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub checkpoint: PathBuf,
    pub store: PathBuf,
    pub bind: SocketAddr,
    pub sessions_dir: PathBuf,
    pub idle: Duration,
    pub static_dir: Option<PathBuf>,
}

pub async fn serve(opts: ServeOptions) -> anyhow::Result<()> {
    let generator = Generator::load(&opts.checkpoint)?;
    let store = ClipStore::open(&opts.store)?;
    if store.skeleton != generator.model.skeleton {
        anyhow::bail!("checkpoint skeleton '{}' differs from the store's", generator.model.skeleton.name);
    }
    let app = AppState::new(generator, store, Some(opts.sessions_dir.clone()), opts.idle)?;
    let sweeper = app.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            let n = sweeper.expire_idle();
            if n > 0 {
                log::info!("expired {n} idle sessions");
            }
        }
    });
    let listener = tokio::net::TcpListener::bind(opts.bind).await.with_context(|| format!("binding {}", opts.bind))?;
    log::info!("serving on {}", listener.local_addr()?);
    axum::serve(listener, router(app, opts.static_dir.as_deref()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

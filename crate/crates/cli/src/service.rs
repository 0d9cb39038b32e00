//! HTTP service backing the annotation tool: scene listing and rendering,
//! keypoint storage and triangulation, and background registration jobs.

use std::collections::{HashMap, HashSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fieldreg::fields::{render, DensityScene, RenderConfig};
use fieldreg::geometry::{triangulate_keypoints, Click, PinholeCamera, RigidTransform};
use fieldreg::io::{self, SceneKeypoints};
use fieldreg::registration::{Observer, Phase, RegistrationConfig, TraceRecord};
use fieldreg::sampler::ActiveSampleSet;
use fieldreg::Error;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::workflow::{self, DistillOptions};

/// Most active-set points included in a job snapshot.
const SNAPSHOT_POINTS: usize = 2000;

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl ApiError {
    fn not_found(what: impl Into<String>) -> Self {
        ApiError(StatusCode::NOT_FOUND, what.into())
    }
    fn bad_request(what: impl Into<String>) -> Self {
        ApiError(StatusCode::BAD_REQUEST, what.into())
    }
    fn conflict(what: impl Into<String>) -> Self {
        ApiError(StatusCode::CONFLICT, what.into())
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidView(_) => StatusCode::NOT_FOUND,
            Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// JSON bodies that fail to parse are a 400, whatever the reason.
fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload.map(|Json(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobPhase {
    Distilling,
    Warmup,
    Registering,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub transform: RigidTransform,
    pub chosen_restart: usize,
    pub final_loss: f64,
}

/// A registration job as seen by pollers. `step` counts processed
/// optimization steps over all restarts (warmup included) out of
/// `total_steps`; neither it nor `phase` ever goes back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobState {
    pub job_id: u64,
    pub scene_a: String,
    pub scene_b: String,
    pub phase: JobPhase,
    pub step: usize,
    pub total_steps: usize,
    pub restart: usize,
    pub restarts: usize,
    pub latest: Option<TraceRecord>,
    /// A subsample of the current active set.
    pub samples: Option<Vec<[f64; 3]>>,
    pub result: Option<JobResult>,
    pub error: Option<String>,
}

impl JobState {
    fn advance(&mut self, phase: JobPhase) {
        self.phase = self.phase.max(phase);
    }
}

pub struct AppState {
    root: PathBuf,
    scenes: Mutex<HashMap<String, Arc<DensityScene>>>,
    jobs: Mutex<HashMap<u64, Arc<Mutex<JobState>>>>,
    running: Arc<Mutex<HashSet<(String, String)>>>,
    next_job: Mutex<u64>,
}

impl AppState {
    pub fn new(root: PathBuf) -> Arc<Self> {
        Arc::new(Self {
            root,
            scenes: Mutex::default(),
            jobs: Mutex::default(),
            running: Arc::default(),
            next_job: Mutex::new(1),
        })
    }

    fn scene_dir(&self, id: &str) -> ApiResult<PathBuf> {
        io::scene_path(&self.root, id)
            .filter(|p| p.join(io::SCENE_MANIFEST).is_file())
            .ok_or_else(|| ApiError::not_found(format!("unknown scene `{id}`")))
    }

    fn scene(&self, id: &str) -> ApiResult<(PathBuf, Arc<DensityScene>)> {
        let dir = self.scene_dir(id)?;
        if let Some(s) = self.scenes.lock().unwrap().get(id) {
            return Ok((dir, s.clone()));
        }
        let scene = Arc::new(io::load_scene(&dir).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?);
        self.scenes.lock().unwrap().insert(id.to_string(), scene.clone());
        Ok((dir, scene))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/scenes", get(list_scenes))
        .route("/scenes/:id/views", get(list_views))
        .route("/scenes/:id/render", get(render_view))
        .route("/scenes/:id/keypoints", post(store_keypoints))
        .route("/triangulate", post(triangulate))
        .route("/jobs", post(start_job))
        .route("/jobs/:id", get(job_state))
        .with_state(state)
}

pub fn serve_blocking(port: u16, root: PathBuf) -> std::io::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let addr = SocketAddr::from(([127, 0, 0, 1], port));
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("serving {} on http://{addr}", root.display());
        axum::serve(listener, router(AppState::new(root)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })
}

async fn list_scenes(State(app): State<Arc<AppState>>) -> ApiResult<Json<Vec<String>>> {
    Ok(Json(io::list_scenes(&app.root)?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewInfo {
    pub view_id: usize,
    pub camera: PinholeCamera,
    /// The view whose camera centre is closest, as a default annotation pair.
    pub nearest: Option<usize>,
}

async fn list_views(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Vec<ViewInfo>>> {
    let (_, scene) = app.scene(&id)?;
    let cams = &scene.cameras;
    let views = cams
        .iter()
        .enumerate()
        .map(|(i, c)| ViewInfo {
            view_id: i,
            camera: *c,
            nearest: (0..cams.len())
                .filter(|&j| j != i)
                .min_by(|&j, &k| {
                    let dj = (cams[j].center() - c.center()).norm();
                    let dk = (cams[k].center() - c.center()).norm();
                    dj.total_cmp(&dk)
                }),
        })
        .collect();
    Ok(Json(views))
}

#[derive(Debug, Deserialize)]
pub struct RenderQuery {
    pub view: usize,
    pub width: Option<u32>,
}

async fn render_view(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, Query(q): Query<RenderQuery>) -> ApiResult<Response> {
    let (_, scene) = app.scene(&id)?;
    let camera = *scene
        .cameras
        .get(q.view)
        .ok_or_else(|| ApiError::not_found(format!("scene `{id}` has no view {}", q.view)))?;
    let camera = match q.width {
        Some(0) => return Err(ApiError::bad_request("width must be positive")),
        Some(w) => camera.resized(w),
        None => camera,
    };
    let png = tokio::task::spawn_blocking(move || {
        let image = render(&scene, &camera, &RenderConfig::default())?;
        io::encode_png(&image, scene.background)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointsResponse {
    pub points: Vec<[f64; 3]>,
}

fn as_arrays(points: &[fieldreg::geometry::Vec3]) -> Vec<[f64; 3]> {
    points.iter().map(|p| [p.x, p.y, p.z]).collect()
}

async fn store_keypoints(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    payload: Result<Json<SceneKeypoints>, JsonRejection>,
) -> ApiResult<Json<PointsResponse>> {
    let (dir, scene) = app.scene(&id)?;
    let body = body(payload)?;
    let points = body.resolve(&scene.cameras)?;
    io::write_json(&dir.join(io::KEYPOINTS_FILE), &body)?;
    Ok(Json(PointsResponse { points: as_arrays(&points) }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TriangulateRequest {
    pub scene: String,
    pub clicks: Vec<Vec<Click>>,
}

async fn triangulate(
    State(app): State<Arc<AppState>>,
    payload: Result<Json<TriangulateRequest>, JsonRejection>,
) -> ApiResult<Json<PointsResponse>> {
    let req = body(payload)?;
    let (_, scene) = app.scene(&req.scene)?;
    let points = triangulate_keypoints(&req.clicks, &scene.cameras)?;
    Ok(Json(PointsResponse { points: as_arrays(&points) }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobRequest {
    pub scene_a: String,
    pub scene_b: String,
    /// Registration settings to override, as a partial config object.
    #[serde(default)]
    pub config: Option<Value>,
    #[serde(default)]
    pub distill: Option<DistillOptions>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobCreated {
    pub job_id: u64,
}

fn load_keypoints(dir: &Path, id: &str) -> ApiResult<SceneKeypoints> {
    let path = dir.join(io::KEYPOINTS_FILE);
    if !path.is_file() {
        return Err(ApiError::conflict(format!("scene `{id}` has no keypoints")));
    }
    SceneKeypoints::load(&path).map_err(|e| ApiError::conflict(e.to_string()))
}

/// Releases the pair when the job ends, however it ends.
struct PairGuard {
    running: Arc<Mutex<HashSet<(String, String)>>>,
    key: (String, String),
}

impl Drop for PairGuard {
    fn drop(&mut self) {
        self.running.lock().unwrap().remove(&self.key);
    }
}

async fn start_job(
    State(app): State<Arc<AppState>>,
    payload: Result<Json<JobRequest>, JsonRejection>,
) -> ApiResult<Json<JobCreated>> {
    let req = body(payload)?;
    let (dir_a, scene_a) = app.scene(&req.scene_a)?;
    let (dir_b, scene_b) = app.scene(&req.scene_b)?;
    let config = match &req.config {
        Some(patch) => workflow::merge_json(&RegistrationConfig::default(), patch)?,
        None => RegistrationConfig::default(),
    };
    config.validate()?;
    let kp_a = load_keypoints(&dir_a, &req.scene_a)?;
    let kp_b = load_keypoints(&dir_b, &req.scene_b)?;
    let keypoints = workflow::keypoint_set(&kp_a, &kp_b, &scene_a, &scene_b).map_err(|e| ApiError::conflict(e.to_string()))?;

    let mut key = [req.scene_a.clone(), req.scene_b.clone()];
    key.sort();
    let key = (key[0].clone(), key[1].clone());
    if !app.running.lock().unwrap().insert(key.clone()) {
        return Err(ApiError::conflict(format!(
            "a job for `{}` and `{}` is already running",
            req.scene_a, req.scene_b
        )));
    }
    let guard = PairGuard {
        running: app.running.clone(),
        key,
    };

    let job_id = {
        let mut next = app.next_job.lock().unwrap();
        let id = *next;
        *next += 1;
        id
    };
    let restarts = config.restarts.max(1);
    let state = Arc::new(Mutex::new(JobState {
        job_id,
        scene_a: req.scene_a.clone(),
        scene_b: req.scene_b.clone(),
        phase: JobPhase::Distilling,
        step: 0,
        total_steps: restarts * (config.warmup_steps + config.total_steps),
        restart: 0,
        restarts,
        latest: None,
        samples: None,
        result: None,
        error: None,
    }));
    app.jobs.lock().unwrap().insert(job_id, state.clone());

    let opts = req.distill.unwrap_or_default();
    tokio::task::spawn_blocking(move || {
        let _guard = guard;
        let outcome = workflow::prepare_pair((&dir_a, &scene_a), (&dir_b, &scene_b), keypoints, &config, &opts)
            .map_err(|e| e.to_string())
            .and_then(|prepared| {
                let per_restart = config.warmup_steps + config.total_steps;
                workflow::run(&prepared, &config, |i| -> Box<dyn Observer> {
                    Box::new(JobObserver {
                        state: state.clone(),
                        restart: i,
                        offset: i * per_restart,
                        warmup: config.warmup_steps,
                    })
                })
                .map_err(|f| f.error.to_string())
            });
        let mut s = state.lock().unwrap();
        match outcome {
            Ok(best) => {
                let r = best.best();
                s.result = Some(JobResult {
                    transform: r.transform,
                    chosen_restart: best.chosen,
                    final_loss: r.final_loss,
                });
                s.step = s.total_steps;
                s.advance(JobPhase::Done);
            }
            Err(e) => {
                s.error = Some(e);
                s.advance(JobPhase::Failed);
            }
        }
    });
    Ok(Json(JobCreated { job_id }))
}

struct JobObserver {
    state: Arc<Mutex<JobState>>,
    restart: usize,
    offset: usize,
    warmup: usize,
}

impl Observer for JobObserver {
    fn record(&mut self, record: &TraceRecord) {
        let (phase, done) = match record.phase {
            Phase::Warmup => (JobPhase::Warmup, record.step + 1),
            Phase::Register => (JobPhase::Registering, self.warmup + record.step),
        };
        let mut s = self.state.lock().unwrap();
        s.advance(phase);
        s.restart = s.restart.max(self.restart);
        s.step = s.step.max(self.offset + done);
        s.latest = Some(record.clone());
    }

    fn samples(&mut self, set: &ActiveSampleSet) {
        let stride = set.len().div_ceil(SNAPSHOT_POINTS).max(1);
        let points = set.points.iter().step_by(stride).map(|p| [p.x, p.y, p.z]).collect();
        self.state.lock().unwrap().samples = Some(points);
    }
}

async fn job_state(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<u64>) -> ApiResult<Json<JobState>> {
    let job = app
        .jobs
        .lock()
        .unwrap()
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown job {id}")))?;
    let snapshot = job.lock().unwrap().clone();
    Ok(Json(snapshot))
}

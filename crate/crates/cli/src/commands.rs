//! Subcommand implementations and the error-to-exit-code mapping.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fieldreg::eval::{add3d, format_table, pose_error, EvalReport};
use fieldreg::fields::{export_point_cloud, render, Aabb, RenderConfig};
use fieldreg::geometry::{RigidTransform, Vec3};
use fieldreg::io::{self, KeypointFile};
use fieldreg::registration::{Observer, RegistrationConfig, RestartOutcome, TraceRecord};
use fieldreg::Error;
use serde::{Deserialize, Serialize};

use crate::workflow::{self, DistillOptions};

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_KEYPOINTS: u8 = 4;
pub const EXIT_NON_FINITE: u8 = 5;

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Manifest(_) | Error::InvalidView(_) => EXIT_INPUT,
            Error::Io(_) => EXIT_IO,
            Error::KeypointCountMismatch { .. } => EXIT_KEYPOINTS,
            Error::NonFiniteLoss { .. } => EXIT_NON_FINITE,
            _ => EXIT_FAILURE,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn usage(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_INPUT,
        message: message.into(),
    }
}

#[derive(Debug, Parser)]
#[command(name = "fieldreg", version, about = "Register pre-trained density fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract the surface field of a scene and smooth it at each σ.
    Distill(DistillArgs),
    /// Estimate the rigid transform mapping scene A into scene B.
    Register(RegisterArgs),
    /// Render one of a scene's views to PNG (and optionally depth to PFM).
    Render(RenderArgs),
    /// Compare a predicted transform with the ground truth.
    Eval(EvalArgs),
    /// Write the expected-depth points of every view.
    ExportPointcloud(ExportArgs),
    /// Serve scenes, keypoint annotation and registration jobs over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SurfaceArgs {
    /// Grid nodes per axis.
    #[arg(long, default_value_t = 128)]
    pub resolution: usize,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
    /// Quadrature step (default r/256).
    #[arg(long)]
    pub step: Option<f64>,
}

impl SurfaceArgs {
    fn options(&self, seed: u64) -> DistillOptions {
        DistillOptions {
            resolution: self.resolution,
            delta: self.delta,
            epsilon: self.epsilon,
            step: self.step,
            seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    pub scene_dir: PathBuf,
    #[command(flatten)]
    pub surface: SurfaceArgs,
    /// Comma-separated smoothing levels.
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    pub scene_a: PathBuf,
    pub scene_b: PathBuf,
    pub keypoints: PathBuf,
    /// JSON file with registration settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Setting override such as `ablations.uniform_sampling=true`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory receiving one NDJSON trace per restart.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Directory receiving active-set snapshots after each sampler update.
    #[arg(long)]
    pub snapshots: Option<PathBuf>,
    /// Output file (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub surface: SurfaceArgs,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    pub scene_dir: PathBuf,
    #[arg(long)]
    pub view: usize,
    /// Output width; height keeps the view's aspect ratio.
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub depth: Option<PathBuf>,
    #[arg(long)]
    pub step: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON with a `transform` field (for example `register` output).
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Object vertices as a binary point list, for 3D-ADD.
    #[arg(long)]
    pub vertices: Option<PathBuf>,
    #[arg(long, default_value = "object")]
    pub object: String,
    /// JSON report path (printed after the table when absent).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    pub scene_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep points inside `xmin,ymin,zmin,xmax,ymax,zmax`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub crop: Option<Vec<f64>>,
    #[arg(long)]
    pub step: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "FIELDREG_SCENES", default_value = "scenes")]
    pub scenes: PathBuf,
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Distill(a) => distill(&a),
        Command::Register(a) => register(&a),
        Command::Render(a) => render_view(&a),
        Command::Eval(a) => eval(&a),
        Command::ExportPointcloud(a) => export(&a),
        Command::Serve(a) => crate::service::serve_blocking(a.port, a.scenes).map_err(|e| CliError {
            code: EXIT_IO,
            message: e.to_string(),
        }),
    }
}

fn distill(a: &DistillArgs) -> CliResult {
    let scene = io::load_scene(&a.scene_dir)?;
    let sigmas = a.sigmas.clone().unwrap_or_else(|| workflow::default_sigmas(scene.radius));
    let d = workflow::distill_scene(&a.scene_dir, &scene, &a.surface.options(a.seed), &sigmas)?;
    log::info!("wrote {} levels to {}", d.levels.len(), a.scene_dir.join(io::SURFACE_DIR).display());
    Ok(())
}

/// Output of `register`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterOutput {
    /// Maps scene A into scene B, 4×4 row-major.
    pub transform: RigidTransform,
    pub chosen_restart: usize,
    pub restart_traces: Vec<RestartSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestartSummary {
    pub seed: u64,
    pub final_loss: Option<f64>,
    pub error: Option<String>,
    pub steps: usize,
    /// NDJSON trace file, when traces were requested.
    pub trace: Option<PathBuf>,
}

fn load_config(a: &RegisterArgs) -> CliResult<RegistrationConfig> {
    let mut config = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::from(Error::Io(format!("{}: {e}", path.display()))))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => RegistrationConfig::default(),
    };
    config = workflow::apply_overrides(&config, &a.overrides).map_err(|e| usage(e.to_string()))?;
    if let Some(r) = a.restarts {
        config.restarts = r;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

struct Snapshots {
    dir: PathBuf,
    restart: usize,
    count: usize,
}

impl Observer for Snapshots {
    fn record(&mut self, _: &TraceRecord) {}

    fn samples(&mut self, set: &fieldreg::sampler::ActiveSampleSet) {
        let path = self.dir.join(format!("restart{}_{:05}.bin", self.restart, self.count));
        if let Err(e) = io::write_atomic(&path, &io::encode_points(&set.points)) {
            log::warn!("snapshot: {e}");
        }
        self.count += 1;
    }
}

fn register(a: &RegisterArgs) -> CliResult {
    let config = load_config(a)?;
    let scene_a = io::load_scene(&a.scene_a)?;
    let scene_b = io::load_scene(&a.scene_b)?;
    let kp = KeypointFile::load(&a.keypoints)?;
    let keypoints = workflow::keypoint_set(&kp.a, &kp.b, &scene_a, &scene_b)?;
    let opts = a.surface.options(config.seed);
    let prepared = workflow::prepare_pair((&a.scene_a, &scene_a), (&a.scene_b, &scene_b), keypoints, &config, &opts)?;
    if let Some(dir) = &a.snapshots {
        fs::create_dir_all(dir).map_err(Error::from)?;
    }
    let snapshot_dir = a.snapshots.clone();
    let result = workflow::run(&prepared, &config, |i| -> Box<dyn Observer> {
        match &snapshot_dir {
            Some(dir) => Box::new(Snapshots {
                dir: dir.clone(),
                restart: i,
                count: 0,
            }),
            None => Box::new(()),
        }
    });
    let outcomes = match result {
        Ok(best) => best,
        Err(failure) => {
            if let Some(dir) = &a.trace {
                write_trace(dir, config.restarts.max(1) - 1, &failure.trace)?;
            }
            return Err(CliError::from(failure.error));
        }
    };
    let mut summaries = Vec::new();
    for (i, outcome) in outcomes.restarts.iter().enumerate() {
        let (trace, final_loss, error) = match outcome {
            RestartOutcome::Done(r) => (&r.trace, Some(r.final_loss), None),
            RestartOutcome::Failed(f) => (&f.trace, None, Some(f.error.to_string())),
        };
        let trace_path = match &a.trace {
            Some(dir) => Some(write_trace(dir, i, trace)?),
            None => None,
        };
        summaries.push(RestartSummary {
            seed: config.seed.wrapping_add(i as u64),
            final_loss,
            error,
            steps: trace.len(),
            trace: trace_path,
        });
    }
    let output = RegisterOutput {
        transform: outcomes.best().transform,
        chosen_restart: outcomes.chosen,
        restart_traces: summaries,
    };
    emit_json(a.out.as_deref(), &output)
}

fn write_trace(dir: &Path, restart: usize, trace: &[TraceRecord]) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(Error::from)?;
    let path = dir.join(format!("restart_{restart}.ndjson"));
    io::write_atomic(&path, io::trace_to_ndjson(trace).as_bytes())?;
    Ok(path)
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> CliResult {
    match out {
        Some(path) => Ok(io::write_json(path, value)?),
        None => {
            println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
            Ok(())
        }
    }
}

fn render_view(a: &RenderArgs) -> CliResult {
    let scene = io::load_scene(&a.scene_dir)?;
    let camera = scene.cameras.get(a.view).ok_or(Error::InvalidView(a.view))?;
    let camera = match a.width {
        Some(0) => return Err(usage("width must be positive")),
        Some(w) => camera.resized(w),
        None => *camera,
    };
    let config = RenderConfig {
        step: a.step,
        ..RenderConfig::default()
    };
    let image = render(&scene, &camera, &config)?;
    io::write_atomic(&a.out, &io::encode_png(&image, scene.background)?)?;
    if let Some(depth) = &a.depth {
        io::write_atomic(depth, &io::encode_depth_pfm(&image))?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct TransformFile {
    transform: RigidTransform,
}

fn read_transform(path: &Path) -> CliResult<RigidTransform> {
    let text = fs::read_to_string(path).map_err(|e| CliError::from(Error::Io(format!("{}: {e}", path.display()))))?;
    let f: TransformFile = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(f.transform)
}

fn eval(a: &EvalArgs) -> CliResult {
    let pred = read_transform(&a.pred)?;
    let gt = read_transform(&a.gt)?;
    let err = pose_error(&pred, &gt);
    let add = match &a.vertices {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| CliError::from(Error::Io(format!("{}: {e}", path.display()))))?;
            let vertices = io::decode_points(&bytes).map_err(|e| usage(e.to_string()))?;
            Some(add3d(&vertices, &pred, &gt)?)
        }
        None => None,
    };
    if err.gimbal_warning {
        log::warn!("rotation error is near gimbal lock; Euler angles are unstable");
    }
    let report = EvalReport::new(&a.object, &err, add);
    print!("{}", format_table(std::slice::from_ref(&report)));
    match &a.report {
        Some(path) => Ok(io::write_json(path, &report)?),
        None => emit_json(None, &report),
    }
}

fn export(a: &ExportArgs) -> CliResult {
    let crop = match a.crop.as_deref() {
        None => None,
        Some([x0, y0, z0, x1, y1, z1]) => Some(Aabb {
            min: Vec3::new(*x0, *y0, *z0),
            max: Vec3::new(*x1, *y1, *z1),
        }),
        Some(_) => return Err(usage("--crop takes six comma-separated values")),
    };
    let scene = io::load_scene(&a.scene_dir)?;
    let config = RenderConfig {
        step: a.step,
        ..RenderConfig::default()
    };
    let points = export_point_cloud(&scene, &config, crop.as_ref())?;
    io::write_atomic(&a.out, &io::encode_points(&points))?;
    log::info!("{} points", points.len());
    Ok(())
}

//! The registration loop: keypoint warmup, then annealed joint optimization.

use serde::{Deserialize, Serialize};

use super::kernel::{log_partition, RobustKernelParams, ALPHA_MAX, ALPHA_MIN};
use super::loss::{matching_loss_and_gradient_cached, registration_keypoint_loss, source_values, Gradient, KeypointSet};
use super::pyramid::Pyramid;
use super::schedule::{geometric_levels, Schedule};
use crate::error::{Error, Result};
use crate::geometry::{PoseParams, RigidTransform, Vec3};
use crate::sampler::{ActiveSampleSet, SamplerConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// λ ≡ 0 after warmup: the keypoint energy is dropped.
    pub no_lambda_annealing: bool,
    /// σ held at the midpoint of its start and end values.
    pub fixed_sigma: bool,
    /// Uniform samples of the ball instead of the keypoint-seeded active set.
    pub uniform_sampling: bool,
    /// Normalized density in place of the surface field.
    pub density_residual: bool,
    /// Emission color in place of the surface field.
    pub radiance_residual: bool,
    /// λ ≡ 1 throughout: keypoint energy only.
    pub keypoint_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub lr_rotation: f64,
    pub lr_translation: f64,
    pub lr_kernel: f64,
    pub sampler_interval: usize,
    /// σ^(0) = `sigma_start_factor · d`, d the mean maximum keypoint distance.
    pub sigma_start_factor: f64,
    pub sigma_end_factor: f64,
    pub sigma_levels: usize,
    pub kernel_init: RobustKernelParams,
    /// Proposal radius; `r / 100` when absent.
    pub rho: Option<f64>,
    pub max_samples: usize,
    pub uniform_samples: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Pose the warmup starts from, axis-angle then translation; identity
    /// when absent.
    pub initial_pose: Option<[f64; 6]>,
    pub ablations: Ablations,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            total_steps: 10_000,
            warmup_steps: 2_000,
            lr_rotation: 0.02,
            lr_translation: 0.01,
            lr_kernel: 0.01,
            sampler_interval: 20,
            sigma_start_factor: 0.2,
            sigma_end_factor: 0.1,
            sigma_levels: 5,
            kernel_init: RobustKernelParams::default(),
            rho: None,
            max_samples: 20_000,
            uniform_samples: 4096,
            restarts: 10,
            seed: 0,
            initial_pose: None,
            ablations: Ablations::default(),
        }
    }
}

impl RegistrationConfig {
    /// Smaller pose steps and a sharper σ range for scenes that overlap only
    /// partially.
    pub fn partial_object() -> Self {
        Self {
            lr_rotation: 0.0005,
            lr_translation: 0.0005,
            lr_kernel: 0.01,
            sigma_start_factor: 0.1,
            sigma_end_factor: 0.0,
            ..Self::default()
        }
    }

    /// Start and end σ for keypoint scale `d`. A zero end value is replaced
    /// by `floor`, the smallest smoothing the fields can represent.
    pub fn sigma_range(&self, d: f64, floor: f64) -> (f64, f64) {
        let start = (self.sigma_start_factor * d).max(floor);
        let end = (self.sigma_end_factor * d).max(floor);
        if self.ablations.fixed_sigma {
            let mid = 0.5 * (start + end);
            (mid, mid)
        } else {
            (start, end)
        }
    }

    /// The σ levels fields must be distilled at.
    pub fn sigma_levels_for(&self, d: f64, floor: f64) -> Vec<f64> {
        let (start, end) = self.sigma_range(d, floor);
        if start == end {
            vec![start]
        } else {
            geometric_levels(start, end, self.sigma_levels.max(2))
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr_rotation, self.lr_translation, self.lr_kernel, self.kernel_init.c];
        if positive.iter().any(|v| !(*v > 0.0)) || self.sampler_interval == 0 || self.total_steps == 0 {
            return Err(Error::InvalidInput("registration config values must be positive".into()));
        }
        if !(ALPHA_MIN..=ALPHA_MAX).contains(&self.kernel_init.alpha) {
            return Err(Error::InvalidInput(format!("alpha must lie in [{ALPHA_MIN}, {ALPHA_MAX}]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Register,
}

/// One line of the optimization trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub phase: Phase,
    pub step: usize,
    pub lambda: f64,
    pub sigma: f64,
    pub loss_total: f64,
    pub loss_match: Option<f64>,
    pub loss_key: f64,
    /// Axis-angle followed by translation.
    pub pose: [f64; 6],
    pub n_samples: usize,
    pub c: f64,
    pub alpha: f64,
}

/// Both scenes' fields, the keypoints, and the radius of scene A.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub a: &'a Pyramid,
    pub b: &'a Pyramid,
    pub keypoints: &'a KeypointSet,
    pub radius_a: f64,
}

#[derive(Debug, Clone)]
pub struct Registration {
    /// Maps scene A coordinates into scene B.
    pub transform: RigidTransform,
    pub pose: PoseParams,
    pub kernel: RobustKernelParams,
    pub final_loss: f64,
    pub seed: u64,
    pub trace: Vec<TraceRecord>,
    pub samples: ActiveSampleSet,
}

/// A failed run together with the trace up to the failure.
#[derive(Debug, Clone)]
pub struct Failure {
    pub error: Error,
    pub trace: Vec<TraceRecord>,
}

/// Receives progress as the loop runs.
pub trait Observer {
    fn record(&mut self, record: &TraceRecord);
    /// Called after every sampler update.
    fn samples(&mut self, _set: &ActiveSampleSet) {}
}

impl Observer for () {
    fn record(&mut self, _: &TraceRecord) {}
}

impl<F: FnMut(&TraceRecord)> Observer for F {
    fn record(&mut self, record: &TraceRecord) {
        self(record)
    }
}

/// Adam with per-parameter learning rates.
#[derive(Debug, Clone)]
struct Adam<const N: usize> {
    lr: [f64; N],
    m: [f64; N],
    v: [f64; N],
    t: i32,
}

impl<const N: usize> Adam<N> {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(lr: [f64; N]) -> Self {
        Self {
            lr,
            m: [0.0; N],
            v: [0.0; N],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64; N], grad: &[f64; N]) {
        self.t += 1;
        let bc1 = 1.0 - Self::B1.powi(self.t);
        let bc2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..N {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= self.lr[i] * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + Self::EPS);
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn softplus_inverse(c: f64) -> f64 {
    if c > 30.0 {
        c
    } else {
        c.exp_m1().ln()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Runs warmup and the main loop once with the given sampler seed.
pub fn register(
    problem: &Problem,
    config: &RegistrationConfig,
    seed: u64,
    observer: &mut dyn Observer,
) -> std::result::Result<Registration, Failure> {
    let fail = |error: Error, trace: &Vec<TraceRecord>| Failure {
        error,
        trace: trace.clone(),
    };
    let mut trace = Vec::with_capacity(config.warmup_steps + config.total_steps);
    config.validate().map_err(|e| fail(e, &trace))?;
    if problem.a.levels.is_empty() || problem.a.levels.len() != problem.b.levels.len() {
        return Err(fail(
            Error::InvalidInput("both scenes need fields at the same σ levels".into()),
            &trace,
        ));
    }
    let ab = &config.ablations;
    let d = problem.keypoints.mean_max_distance();
    let floor = problem.a.levels.iter().map(|l| l.sigma).fold(f64::INFINITY, f64::min);
    let (sigma_start, sigma_end) = config.sigma_range(d, floor);
    let schedule = Schedule {
        total_steps: config.total_steps,
        sigma_start,
        sigma_end,
    };
    let sampler_config = SamplerConfig {
        rho: config.rho.unwrap_or(problem.radius_a / 100.0),
        radius: problem.radius_a,
        max_samples: config.max_samples,
        uniform: ab.uniform_sampling,
        uniform_samples: config.uniform_samples,
    };
    let mut samples = ActiveSampleSet::bootstrap(&problem.keypoints.q_a, sampler_config, seed).map_err(|e| fail(e, &trace))?;

    let mut pose = config.initial_pose.map_or_else(PoseParams::identity, |p| PoseParams::from_array(&p));
    let mut warm = Adam::new([
        config.lr_rotation,
        config.lr_rotation,
        config.lr_rotation,
        config.lr_translation,
        config.lr_translation,
        config.lr_translation,
    ]);
    for step in 0..config.warmup_steps {
        let (loss, grad) = registration_keypoint_loss(problem.keypoints, &pose);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(fail(Error::NonFiniteLoss { step }, &trace));
        }
        let record = TraceRecord {
            phase: Phase::Warmup,
            step,
            lambda: 1.0,
            sigma: sigma_start,
            loss_total: loss,
            loss_match: None,
            loss_key: loss,
            pose: pose.to_array(),
            n_samples: samples.len(),
            c: config.kernel_init.c,
            alpha: config.kernel_init.alpha,
        };
        observer.record(&record);
        trace.push(record);
        let mut p = pose.to_array();
        warm.step(&mut p, &grad);
        pose = PoseParams::from_array(&p);
        pose.canonicalize();
    }

    let lr_pose = [
        config.lr_rotation,
        config.lr_rotation,
        config.lr_rotation,
        config.lr_translation,
        config.lr_translation,
        config.lr_translation,
    ];
    let mut adam = Adam::new([
        lr_pose[0],
        lr_pose[1],
        lr_pose[2],
        lr_pose[3],
        lr_pose[4],
        lr_pose[5],
        config.lr_kernel,
        config.lr_kernel,
    ]);
    let mut theta_c = softplus_inverse(config.kernel_init.c);
    let mut alpha = config.kernel_init.alpha;
    let mut final_loss = f64::NAN;
    let mut ordered = Vec::new();
    let mut a_values = Vec::new();
    let mut cached_level = None;
    for step in 1..=config.total_steps {
        let kernel = RobustKernelParams {
            c: softplus(theta_c),
            alpha,
        };
        let sigma = schedule.sigma(step);
        let level = problem.a.nearest(sigma);
        if step % config.sampler_interval == 0 {
            samples.update(step, problem.a, problem.b, level, &pose, kernel.c);
            observer.samples(&samples);
            cached_level = None;
        }
        if cached_level != Some(level) {
            ordered = locality_order(&samples.points, problem.radius_a);
            a_values = source_values(&ordered, &problem.a.levels[level]);
            cached_level = Some(level);
        }
        let lambda = if ab.keypoint_only {
            1.0
        } else if ab.no_lambda_annealing {
            0.0
        } else {
            schedule.lambda(step)
        };
        let (l_key, g_key) = registration_keypoint_loss(problem.keypoints, &pose);
        let (l_match, g_match) =
            matching_loss_and_gradient_cached(&ordered, &a_values, &problem.b.levels[level], &pose, &kernel)
                .map_err(|e| fail(e, &trace))?;
        let total = (1.0 - lambda) * l_match + lambda * l_key;
        let grad = g_match.scaled(1.0 - lambda).add(&Gradient {
            pose: g_key,
            c: 0.0,
            alpha: 0.0,
        }.scaled(lambda));
        let record = TraceRecord {
            phase: Phase::Register,
            step,
            lambda,
            sigma: problem.a.levels[level].sigma,
            loss_total: total,
            loss_match: Some(l_match),
            loss_key: l_key,
            pose: pose.to_array(),
            n_samples: samples.len(),
            c: kernel.c,
            alpha,
        };
        observer.record(&record);
        trace.push(record);
        if !total.is_finite() || !grad.is_finite() {
            return Err(fail(Error::NonFiniteLoss { step }, &trace));
        }
        final_loss = total;

        // (c, α) descend the normalized likelihood: mean κ plus ln Z over the
        // bounded residual range
        let r_max = (problem.a.levels[level].channels.len() as f64).sqrt();
        let log_z = log_partition(&kernel, r_max);
        let p0 = pose.to_array();
        let mut params = [p0[0], p0[1], p0[2], p0[3], p0[4], p0[5], theta_c, alpha];
        let mut g = [0.0; 8];
        g[..6].copy_from_slice(&grad.pose);
        g[6] = (grad.c + (1.0 - lambda) * log_z.d_c) * sigmoid(theta_c);
        g[7] = grad.alpha + (1.0 - lambda) * log_z.d_alpha;
        adam.step(&mut params, &g);
        pose = PoseParams::from_array(&[params[0], params[1], params[2], params[3], params[4], params[5]]);
        pose.canonicalize();
        theta_c = params[6];
        alpha = params[7].clamp(ALPHA_MIN, ALPHA_MAX);
    }

    Ok(Registration {
        transform: pose.to_transform(),
        pose,
        kernel: RobustKernelParams {
            c: softplus(theta_c),
            alpha,
        },
        final_loss,
        seed,
        trace,
        samples,
    })
}

/// The samples sorted by coarse cell (z-major), so consecutive field
/// lookups touch nearby memory. The matching energy is a mean, so only the
/// summation order changes.
fn locality_order(points: &[Vec3], radius: f64) -> Vec<Vec3> {
    let cell = radius / 32.0;
    let key = |p: &Vec3| {
        let q = |v: f64| ((v + radius) / cell).floor() as i64;
        (q(p.z), q(p.y), q(p.x))
    };
    let mut out = points.to_vec();
    out.sort_by_key(key);
    out
}

/// Outcome of one restart.
#[derive(Debug, Clone)]
pub enum RestartOutcome {
    Done(Registration),
    Failed(Failure),
}

#[derive(Debug, Clone)]
pub struct BestOf {
    pub chosen: usize,
    pub restarts: Vec<RestartOutcome>,
}

impl BestOf {
    pub fn best(&self) -> &Registration {
        match &self.restarts[self.chosen] {
            RestartOutcome::Done(r) => r,
            RestartOutcome::Failed(_) => unreachable!("chosen restart always succeeded"),
        }
    }
}

/// `config.restarts` seeded runs; the one with the lowest final total loss
/// wins. Fails only if every run fails, with the last run's error.
pub fn register_best_of(
    problem: &Problem,
    config: &RegistrationConfig,
    mut observer: impl FnMut(usize) -> Box<dyn Observer>,
) -> std::result::Result<BestOf, Failure> {
    let mut restarts = Vec::new();
    let mut chosen: Option<(usize, f64)> = None;
    for i in 0..config.restarts.max(1) {
        let mut obs = observer(i);
        match register(problem, config, config.seed.wrapping_add(i as u64), obs.as_mut()) {
            Ok(r) => {
                if chosen.map_or(true, |(_, best)| r.final_loss < best) {
                    chosen = Some((i, r.final_loss));
                }
                restarts.push(RestartOutcome::Done(r));
            }
            Err(f) => restarts.push(RestartOutcome::Failed(f)),
        }
    }
    match chosen {
        Some((chosen, _)) => Ok(BestOf { chosen, restarts }),
        None => match restarts.pop() {
            Some(RestartOutcome::Failed(f)) => Err(f),
            _ => unreachable!(),
        },
    }
}

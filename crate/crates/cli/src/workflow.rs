//! Steps shared by the CLI and the service: distilling a scene directory,
//! loading keypoints, and running a registration.

use std::path::Path;

use fieldreg::fields::{extract_surface_field, DensityScene, GridSpec, SurfaceConfig};
use fieldreg::io::{self, Distilled, SceneKeypoints};
use fieldreg::pipeline::{build_pyramid, surface_levels, FieldKind};
use fieldreg::registration::{
    register_best_of, BestOf, Failure, KeypointSet, Level, Observer, Problem, Pyramid, RegistrationConfig,
};
use fieldreg::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// σ values closer than this (relative) count as the same level.
const SIGMA_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillOptions {
    pub resolution: usize,
    pub delta: f64,
    pub epsilon: f64,
    /// Quadrature step; the scene default `r / 256` when absent.
    pub step: Option<f64>,
    pub seed: u64,
}

impl Default for DistillOptions {
    fn default() -> Self {
        let s = SurfaceConfig::default();
        Self {
            resolution: s.resolution[0],
            delta: s.delta,
            epsilon: s.epsilon,
            step: None,
            seed: 0,
        }
    }
}

impl DistillOptions {
    fn surface_config(&self) -> SurfaceConfig {
        SurfaceConfig {
            resolution: [self.resolution; 3],
            delta: self.delta,
            epsilon: self.epsilon,
            step: self.step,
        }
    }

    /// Spacing of the surface grid for a scene of radius `r`.
    pub fn voxel(&self, r: f64) -> f64 {
        GridSpec::cube(self.resolution, r).min_spacing()
    }
}

/// σ levels used when none are requested: the default schedule for an
/// object about half the scene radius across.
pub fn default_sigmas(radius: f64) -> Vec<f64> {
    RegistrationConfig::default().sigma_levels_for(0.5 * radius, 0.0)
}

/// Extracts, thresholds and smooths a scene, and stores the result under the
/// scene directory.
pub fn distill_scene(dir: &Path, scene: &DensityScene, opts: &DistillOptions, sigmas: &[f64]) -> Result<Distilled> {
    if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::InvalidInput("σ values must be finite and non-negative".into()));
    }
    let surface = extract_surface_field(scene, &opts.surface_config())?;
    let step = opts.step.unwrap_or_else(|| scene.default_step());
    let levels = surface_levels(scene, &surface, step, sigmas)?;
    let manifest = io::save_distilled(dir, step, &surface, &levels, opts.seed)?;
    Ok(Distilled {
        manifest,
        surface,
        levels,
    })
}

fn has_level(d: &Distilled, sigma: f64) -> bool {
    d.levels.iter().any(|l| (l.sigma - sigma).abs() <= SIGMA_TOL * sigma.max(1.0))
}

/// Stored fields when they match `opts` and cover `sigmas`; otherwise the
/// scene is distilled again.
pub fn ensure_distilled(dir: &Path, scene: &DensityScene, opts: &DistillOptions, sigmas: &[f64]) -> Result<Distilled> {
    if let Ok(d) = io::load_distilled(dir) {
        let m = &d.manifest;
        let matches = m.grid == GridSpec::cube(opts.resolution, scene.radius)
            && m.delta == opts.delta
            && m.epsilon == opts.epsilon
            && m.step == opts.step.unwrap_or_else(|| scene.default_step());
        if matches && sigmas.iter().all(|s| has_level(&d, *s)) {
            return Ok(d);
        }
    }
    distill_scene(dir, scene, opts, sigmas)
}

/// Levels at exactly `sigmas`, in that order.
fn select_levels(d: &Distilled, sigmas: &[f64]) -> Pyramid {
    Pyramid::new(
        sigmas
            .iter()
            .map(|s| {
                let field = d
                    .levels
                    .iter()
                    .find(|l| (l.sigma - s).abs() <= SIGMA_TOL * s.max(1.0))
                    .expect("ensure_distilled provides every level");
                Level::single(field.clone())
            })
            .collect(),
    )
}

/// Fields of the configured kind at `sigmas` for a scene directory.
pub fn scene_pyramid(dir: &Path, scene: &DensityScene, opts: &DistillOptions, sigmas: &[f64], kind: FieldKind) -> Result<Pyramid> {
    let distilled = ensure_distilled(dir, scene, opts, sigmas)?;
    Ok(match kind {
        FieldKind::Surface => select_levels(&distilled, sigmas),
        _ => build_pyramid(scene, &distilled.surface, opts.step.unwrap_or_else(|| scene.default_step()), sigmas, kind)?,
    })
}

/// Applies `key.path=value` overrides to a serializable value. Values parse
/// as JSON, falling back to a string.
pub fn apply_overrides<T: Serialize + for<'de> Deserialize<'de>>(base: &T, overrides: &[String]) -> Result<T> {
    let mut v = serde_json::to_value(base).map_err(|e| Error::InvalidInput(e.to_string()))?;
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("override `{o}` is not key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut slot = &mut v;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| Error::InvalidInput(format!("unknown config key `{key}`")))?;
        }
        *slot = value;
    }
    serde_json::from_value(v).map_err(|e| Error::InvalidInput(format!("config: {e}")))
}

/// Merges a JSON object of overrides into a value, key by key.
pub fn merge_json<T: Serialize + for<'de> Deserialize<'de>>(base: &T, patch: &Value) -> Result<T> {
    fn merge(dst: &mut Value, src: &Value) -> Result<()> {
        match (dst, src) {
            (Value::Object(d), Value::Object(s)) => {
                for (k, v) in s {
                    let slot = d
                        .get_mut(k)
                        .ok_or_else(|| Error::InvalidInput(format!("unknown config key `{k}`")))?;
                    merge(slot, v)?;
                }
                Ok(())
            }
            (d, s) => {
                *d = s.clone();
                Ok(())
            }
        }
    }
    let mut v = serde_json::to_value(base).map_err(|e| Error::InvalidInput(e.to_string()))?;
    merge(&mut v, patch)?;
    serde_json::from_value(v).map_err(|e| Error::InvalidInput(format!("config: {e}")))
}

pub fn keypoint_set(a: &SceneKeypoints, b: &SceneKeypoints, scene_a: &DensityScene, scene_b: &DensityScene) -> Result<KeypointSet> {
    if a.len() != b.len() {
        return Err(Error::KeypointCountMismatch { a: a.len(), b: b.len() });
    }
    KeypointSet::new(a.resolve(&scene_a.cameras)?, b.resolve(&scene_b.cameras)?)
}

/// Everything a registration run needs, loaded from two scene directories.
pub struct Prepared {
    pub a: Pyramid,
    pub b: Pyramid,
    pub keypoints: KeypointSet,
    pub radius_a: f64,
}

pub fn prepare_pair(
    (dir_a, scene_a): (&Path, &DensityScene),
    (dir_b, scene_b): (&Path, &DensityScene),
    keypoints: KeypointSet,
    config: &RegistrationConfig,
    opts: &DistillOptions,
) -> Result<Prepared> {
    let d = keypoints.mean_max_distance();
    let floor = opts.voxel(scene_a.radius.max(scene_b.radius));
    let sigmas = config.sigma_levels_for(d, floor);
    let kind = FieldKind::from_ablations(&config.ablations);
    Ok(Prepared {
        a: scene_pyramid(dir_a, scene_a, opts, &sigmas, kind)?,
        b: scene_pyramid(dir_b, scene_b, opts, &sigmas, kind)?,
        keypoints,
        radius_a: scene_a.radius,
    })
}

pub fn run(prepared: &Prepared, config: &RegistrationConfig, observer: impl FnMut(usize) -> Box<dyn Observer>) -> std::result::Result<BestOf, Failure> {
    let problem = Problem {
        a: &prepared.a,
        b: &prepared.b,
        keypoints: &prepared.keypoints,
        radius_a: prepared.radius_a,
    };
    register_best_of(&problem, config, observer)
}

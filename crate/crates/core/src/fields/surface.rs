//! Surface likelihood: the probability that a camera ray reaching `x` stops in
//! a window of half-width δ around it, maximized over cameras.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::render::transmittance;
use super::{DensityScene, GridSpec, ScalarGrid};
use crate::error::{Error, Result};
use crate::geometry::{Ray, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceConfig {
    pub resolution: [usize; 3],
    /// Half-width of the integration window.
    pub delta: f64,
    pub epsilon: f64,
    /// Quadrature step; `None` uses the scene default.
    pub step: Option<f64>,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            resolution: [128; 3],
            delta: 0.05,
            epsilon: 0.5,
            step: None,
        }
    }
}

/// Surface likelihood sampled on a grid spanning `[-r, r]³`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceFieldGrid {
    pub grid: ScalarGrid,
    pub epsilon: f64,
    pub delta: f64,
}

impl SurfaceFieldGrid {
    pub fn sample(&self, x: &Vec3) -> f64 {
        self.grid.sample(x)
    }
}

/// Binary occupancy on grid nodes. As a continuous field each node owns its
/// Voronoi cell (nearest-node lookup).
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryGrid {
    pub spec: GridSpec,
    pub cells: Vec<bool>,
}

impl BinaryGrid {
    pub fn from_fn(spec: GridSpec, f: impl Fn(Vec3) -> bool + Sync) -> Self {
        let cells = (0..spec.len()).into_par_iter().map(|i| f(spec.node_at(i))).collect();
        Self { spec, cells }
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.cells[self.spec.index(i, j, k)]
    }

    /// Value of the cell containing `x`; `false` outside the grid.
    pub fn sample(&self, x: &Vec3) -> bool {
        match self.spec.nearest(x) {
            Some([i, j, k]) => self.get(i, j, k),
            None => false,
        }
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn to_scalar(&self) -> ScalarGrid {
        ScalarGrid {
            spec: self.spec,
            values: self.cells.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// `T(0 → t−δ) · (1 − exp(−2 τ(r(t)) δ))`. Windows reaching behind the ray
/// origin are clipped to it.
pub fn surface_likelihood_along_ray(scene: &DensityScene, ray: &Ray, t: f64, delta: f64, h: f64) -> Result<f64> {
    surface_likelihood_with_density(scene, ray, t, delta, h, scene.density(&ray.at(t)))
}

fn surface_likelihood_with_density(
    scene: &DensityScene,
    ray: &Ray,
    t: f64,
    delta: f64,
    h: f64,
    tau: f64,
) -> Result<f64> {
    if !tau.is_finite() {
        let x = ray.at(t);
        return Err(Error::NonFiniteDensity([x.x, x.y, x.z]));
    }
    if tau <= 0.0 {
        return Ok(0.0);
    }
    let hit = 1.0 - (-2.0 * tau * delta).exp();
    let travel = transmittance(scene, ray, (t - delta).max(0.0), h)?;
    Ok((travel * hit).clamp(0.0, 1.0))
}

/// Surface likelihood at a point, maximized over the scene's camera centers.
pub fn surface_value(scene: &DensityScene, x: &Vec3, delta: f64, h: f64) -> Result<f64> {
    if scene.cameras.is_empty() {
        return Err(Error::NoCameras);
    }
    let tau = scene.density(x);
    if tau == 0.0 {
        return Ok(0.0);
    }
    let mut best: f64 = 0.0;
    for cam in &scene.cameras {
        let o = cam.center();
        let dist = (x - o).norm();
        if dist == 0.0 {
            continue;
        }
        let ray = Ray::new(o, x - o);
        best = best.max(surface_likelihood_with_density(scene, &ray, dist, delta, h, tau)?);
    }
    Ok(best)
}

/// Samples the surface field on a grid spanning `[-r, r]³`.
pub fn extract_surface_field(scene: &DensityScene, config: &SurfaceConfig) -> Result<SurfaceFieldGrid> {
    if scene.cameras.is_empty() {
        return Err(Error::NoCameras);
    }
    let spec = GridSpec::cube_dims(config.resolution, scene.radius);
    let h = config.step.unwrap_or_else(|| scene.default_step());
    let values = (0..spec.len())
        .into_par_iter()
        .map(|idx| surface_value(scene, &spec.node_at(idx), config.delta, h).map(|v| v as f32))
        .collect::<Result<Vec<f32>>>()?;
    Ok(SurfaceFieldGrid {
        grid: ScalarGrid { spec, values },
        epsilon: config.epsilon,
        delta: config.delta,
    })
}

/// Conservative surface estimate: `S(x) > ε` per node.
pub fn threshold(field: &SurfaceFieldGrid) -> BinaryGrid {
    BinaryGrid {
        spec: field.grid.spec,
        cells: field.grid.values.iter().map(|&v| v as f64 > field.epsilon).collect(),
    }
}

/// Samples per axis in each [`occupancy`] cell that straddles the threshold.
const OCCUPANCY_SAMPLES: usize = 4;

/// Fraction of each grid cell where `S > ε`, with `step` as the
/// transmittance quadrature step. Cells whose 26 neighbours agree with them
/// take their own thresholded value. Cells near the threshold crossing are
/// estimated from jittered stratified samples, seeded by cell index, so that
/// faces aligned with the grid are not biased by a fixed sample pattern.
pub fn occupancy(scene: &DensityScene, field: &SurfaceFieldGrid, step: f64) -> Result<ScalarGrid> {
    let spec = field.grid.spec;
    let dims = spec.dims();
    let inside = |v: f32| v as f64 > field.epsilon;
    let m = OCCUPANCY_SAMPLES;
    let values = (0..spec.len())
        .into_par_iter()
        .map(|idx| {
            let c = spec.unindex(idx);
            let own = inside(field.grid.values[idx]);
            let span = |a: usize| a.saturating_sub(1)..=(a + 1).min(dims[0].max(dims[1]).max(dims[2]) - 1);
            let mixed = span(c[2]).filter(|&k| k < dims[2]).any(|k| {
                span(c[1])
                    .filter(|&j| j < dims[1])
                    .any(|j| span(c[0]).filter(|&i| i < dims[0]).any(|i| inside(field.grid.get(i, j, k)) != own))
            });
            if !mixed {
                return Ok(if own { 1.0 } else { 0.0 });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(idx as u64);
            let center = spec.node_at(idx);
            let mut hits = 0;
            for a in 0..m {
                for b in 0..m {
                    for c in 0..m {
                        let mut offset = |s: usize, h: f64| h * ((s as f64 + rng.gen::<f64>()) / m as f64 - 0.5);
                        let d = Vec3::new(offset(a, spec.spacing[0]), offset(b, spec.spacing[1]), offset(c, spec.spacing[2]));
                        if surface_value(scene, &(center + d), field.delta, step)? as f32 as f64 > field.epsilon {
                            hits += 1;
                        }
                    }
                }
            }
            Ok(hits as f32 / (m * m * m) as f32)
        })
        .collect::<Result<Vec<f32>>>()?;
    Ok(ScalarGrid { spec, values })
}

//! Fixed-step quadrature of the volume rendering integrals.
//!
//! A ray is cut into steps `[k h, (k + 1) h]` anchored at its origin. Each step
//! carries the density sampled at its midpoint, so the optical depth is a
//! non-decreasing, continuous function of the travelled distance.

use rayon::prelude::*;

use super::DensityScene;
use crate::error::{Error, Result};
use crate::geometry::{PinholeCamera, Ray, Vec3};

/// Merged half-open step-index ranges covering the scene's support up to `t_end`.
pub(crate) fn step_ranges(scene: &DensityScene, ray: &Ray, t_end: f64, h: f64) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for (a, b) in scene.support(ray) {
        let b = b.min(t_end);
        if a >= b {
            continue;
        }
        let k0 = (a / h).floor().max(0.0) as usize;
        let k1 = (b / h).ceil() as usize;
        match out.last_mut() {
            Some(last) if k0 <= last.1 => last.1 = last.1.max(k1),
            _ => out.push((k0, k1)),
        }
    }
    out
}

fn checked(density: f64, x: &Vec3) -> Result<f64> {
    if density.is_finite() {
        Ok(density)
    } else {
        Err(Error::NonFiniteDensity([x.x, x.y, x.z]))
    }
}

/// Optical depth `∫₀ᵗ τ(r(s)) ds`.
pub fn optical_depth(scene: &DensityScene, ray: &Ray, t: f64, h: f64) -> Result<f64> {
    let mut acc = 0.0;
    if t <= 0.0 {
        return Ok(0.0);
    }
    for (k0, k1) in step_ranges(scene, ray, t, h) {
        for k in k0..k1 {
            let lo = k as f64 * h;
            if lo >= t {
                break;
            }
            let len = ((k + 1) as f64 * h).min(t) - lo;
            let x = ray.at((k as f64 + 0.5) * h);
            let tau = checked(scene.density(&x), &x)?;
            acc += tau * len;
        }
    }
    Ok(acc)
}

/// Probability that `ray` travels distance `t` without hitting a particle.
pub fn transmittance(scene: &DensityScene, ray: &Ray, t: f64, h: f64) -> Result<f64> {
    Ok((-optical_depth(scene, ray, t, h)?).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    /// Quadrature step; `None` uses the scene default.
    pub step: Option<f64>,
    /// Pixels with accumulated opacity at or below this get no depth.
    pub opacity_min: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            step: None,
            opacity_min: 0.5,
        }
    }
}

/// Color and expected-depth images, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendering {
    pub width: u32,
    pub height: u32,
    /// Present when the scene carries an emission field.
    pub rgb: Option<Vec<[f64; 3]>>,
    /// Expected ray-termination distance; `None` for background pixels.
    pub depth: Vec<Option<f64>>,
    pub opacity: Vec<f64>,
}

impl Rendering {
    pub fn depth_at(&self, i: u32, j: u32) -> Option<f64> {
        self.depth[(j * self.width + i) as usize]
    }

    pub fn rgb_at(&self, i: u32, j: u32) -> Option<[f64; 3]> {
        self.rgb.as_ref().map(|c| c[(j * self.width + i) as usize])
    }
}

struct RayResult {
    rgb: [f64; 3],
    depth: Option<f64>,
    opacity: f64,
}

fn march(scene: &DensityScene, ray: &Ray, h: f64, opacity_min: f64) -> Result<RayResult> {
    let t_far = ray.origin.norm() + scene.radius;
    let mut transmit = 1.0;
    let mut rgb = [0.0; 3];
    let mut depth_acc = 0.0;
    'outer: for (k0, k1) in step_ranges(scene, ray, t_far, h) {
        for k in k0..k1 {
            let t_mid = (k as f64 + 0.5) * h;
            let x = ray.at(t_mid);
            let (tau, color) = scene.sample(&x);
            let tau = checked(tau, &x)?;
            if tau == 0.0 {
                continue;
            }
            let alpha = 1.0 - (-tau * h).exp();
            let w = transmit * alpha;
            for c in 0..3 {
                rgb[c] += w * color[c];
            }
            depth_acc += w * t_mid;
            transmit *= 1.0 - alpha;
            if transmit < 1e-12 {
                break 'outer;
            }
        }
    }
    let opacity = 1.0 - transmit;
    for c in 0..3 {
        rgb[c] += transmit * scene.background[c];
    }
    let depth = (opacity > opacity_min).then(|| depth_acc / opacity);
    Ok(RayResult { rgb, depth, opacity })
}

/// Renders color (when the scene has emission) and expected depth.
pub fn render(scene: &DensityScene, camera: &PinholeCamera, config: &RenderConfig) -> Result<Rendering> {
    let h = config.step.unwrap_or_else(|| scene.default_step());
    let (w, ht) = (camera.width, camera.height);
    let pixels: Vec<RayResult> = (0..w * ht)
        .into_par_iter()
        .map(|p| march(scene, &camera.pixel_ray(p % w, p / w), h, config.opacity_min))
        .collect::<Result<_>>()?;
    Ok(Rendering {
        width: w,
        height: ht,
        rgb: scene.has_emission().then(|| pixels.iter().map(|p| p.rgb).collect()),
        depth: pixels.iter().map(|p| p.depth).collect(),
        opacity: pixels.iter().map(|p| p.opacity).collect(),
    })
}

/// Axis-aligned crop box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    /// Bounding box of `points`, grown by `margin` on every side.
    pub fn around(points: &[Vec3], margin: f64) -> Option<Self> {
        let first = points.first()?;
        let (mut lo, mut hi) = (*first, *first);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let m = Vec3::repeat(margin);
        Some(Self { min: lo - m, max: hi + m })
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

/// Back-projects every valid expected-depth pixel of every camera.
pub fn export_point_cloud(scene: &DensityScene, config: &RenderConfig, crop: Option<&Aabb>) -> Result<Vec<Vec3>> {
    let mut points = Vec::new();
    for cam in &scene.cameras {
        let r = render(scene, cam, config)?;
        for j in 0..r.height {
            for i in 0..r.width {
                if let Some(d) = r.depth_at(i, j) {
                    let p = cam.pixel_ray(i, j).at(d);
                    if crop.map_or(true, |b| b.contains(&p)) {
                        points.push(p);
                    }
                }
            }
        }
    }
    Ok(points)
}

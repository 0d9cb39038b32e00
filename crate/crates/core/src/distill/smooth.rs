//! Gaussian smoothing of binary surface fields.
//!
//! A [`BinaryGrid`] is read as a piecewise-constant field where every node owns
//! its cell. Convolving such a field with an isotropic Gaussian has a closed
//! form at the nodes: a separable filter whose taps are the Gaussian mass over
//! each cell. [`smooth_mc`] estimates the same expectation by sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::erf::erf;

use super::mlp::Mlp;
use crate::fields::{BinaryGrid, GridSpec, ScalarGrid};
use crate::geometry::Vec3;

/// Gaussian samples are truncated at this many standard deviations per axis.
pub const TRUNCATION: f64 = 4.0;

fn phi(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

fn truncated_normal(rng: &mut impl Rng) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= TRUNCATION {
            return z;
        }
    }
}

/// Monte-Carlo estimate of `E[S^ε(z)]`, `z ~ N(x, σ² I)` truncated at 4σ.
pub fn smooth_mc(field: &BinaryGrid, x: &Vec3, sigma: f64, n: usize, seed: u64) -> f64 {
    let n = n.max(1);
    if sigma <= 0.0 {
        return if field.sample(x) { 1.0 } else { 0.0 };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hits = (0..n)
        .filter(|_| {
            let z = x + Vec3::new(
                truncated_normal(&mut rng),
                truncated_normal(&mut rng),
                truncated_normal(&mut rng),
            ) * sigma;
            field.sample(&z)
        })
        .count();
    hits as f64 / n as f64
}

/// Cell-integrated Gaussian taps `w_j`, `j = -J..=J`, normalized to unit sum.
pub fn gaussian_taps(sigma: f64, spacing: f64) -> Vec<f64> {
    if sigma <= 0.0 || spacing <= 0.0 {
        return vec![1.0];
    }
    let reach = (TRUNCATION * sigma / spacing + 0.5).ceil() as i64;
    let mut taps: Vec<f64> = (-reach..=reach)
        .map(|j| {
            let lo = ((j as f64 - 0.5) * spacing / sigma).max(-TRUNCATION);
            let hi = ((j as f64 + 0.5) * spacing / sigma).min(TRUNCATION);
            if hi > lo {
                phi(hi) - phi(lo)
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|w| *w /= total);
    taps
}

fn convolve_axis(values: &[f32], spec: &GridSpec, axis: usize, taps: &[f64]) -> Vec<f32> {
    if taps.len() == 1 {
        return values.to_vec();
    }
    let dims = spec.dims();
    let reach = (taps.len() / 2) as i64;
    let stride = [1, dims[0], dims[0] * dims[1]][axis];
    let n = dims[axis] as i64;
    (0..values.len())
        .into_par_iter()
        .map(|idx| {
            let pos = ((idx / stride) % dims[axis]) as i64;
            let mut acc = 0.0f64;
            for (t, w) in taps.iter().enumerate() {
                let q = pos + t as i64 - reach;
                if q < 0 || q >= n {
                    continue;
                }
                let v = values[(idx as i64 + (q - pos) * stride as i64) as usize];
                if v != 0.0 {
                    acc += w * v as f64;
                }
            }
            acc as f32
        })
        .collect()
}

/// Separable Gaussian blur of a node-valued grid (zero outside the grid).
pub fn gaussian_blur(grid: &ScalarGrid, sigma: f64) -> ScalarGrid {
    let mut values = grid.values.clone();
    for axis in 0..3 {
        let taps = gaussian_taps(sigma, grid.spec.spacing[axis]);
        values = convolve_axis(&values, &grid.spec, axis, &taps);
    }
    ScalarGrid {
        spec: grid.spec,
        values,
    }
}

/// How smoothed grids are computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistillMethod {
    /// Exact node values through the separable cell-integrated filter.
    Convolution,
    /// Per-node Monte-Carlo with `samples` draws; node `i` uses seed `seed + i`.
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub enum Backing {
    Grid(ScalarGrid),
    Mlp(Box<Mlp>),
}

/// A queryable `S^σ`. Queries are clamped to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct SmoothedField {
    pub sigma: f64,
    pub backing: Backing,
    /// Central-difference step for spatial gradients.
    pub gradient_step: f64,
}

impl SmoothedField {
    pub fn from_grid(sigma: f64, grid: ScalarGrid) -> Self {
        let gradient_step = 0.5 * grid.spec.min_spacing();
        Self {
            sigma,
            backing: Backing::Grid(grid),
            gradient_step,
        }
    }

    pub fn grid(&self) -> Option<&ScalarGrid> {
        match &self.backing {
            Backing::Grid(g) => Some(g),
            Backing::Mlp(_) => None,
        }
    }

    pub fn query(&self, x: &Vec3) -> f64 {
        let v = match &self.backing {
            Backing::Grid(g) => g.sample(x),
            Backing::Mlp(m) => m.predict(x),
        };
        v.clamp(0.0, 1.0)
    }

    /// Value and central-difference spatial gradient.
    pub fn query_with_gradient(&self, x: &Vec3) -> (f64, Vec3) {
        let h = self.gradient_step;
        if let Backing::Grid(grid) = &self.backing {
            let v = grid.sample_stencil(x, h).map(|v| v.clamp(0.0, 1.0));
            let g = Vec3::new(v[1] - v[2], v[3] - v[4], v[5] - v[6]) / (2.0 * h);
            return (v[0], g);
        }
        let mut g = Vec3::zeros();
        for a in 0..3 {
            let mut d = Vec3::zeros();
            d[a] = h;
            g[a] = (self.query(&(x + d)) - self.query(&(x - d))) / (2.0 * h);
        }
        (self.query(x), g)
    }
}

/// Smooths a binary field at each requested σ.
pub fn distill_grid(field: &BinaryGrid, sigmas: &[f64], method: DistillMethod) -> Vec<SmoothedField> {
    let base = field.to_scalar();
    sigmas
        .iter()
        .map(|&sigma| {
            let grid = match method {
                DistillMethod::Convolution => gaussian_blur(&base, sigma),
                DistillMethod::MonteCarlo { samples, seed } => {
                    let spec = field.spec;
                    let values = (0..spec.len())
                        .into_par_iter()
                        .map(|i| smooth_mc(field, &spec.node_at(i), sigma, samples, seed.wrapping_add(i as u64)) as f32)
                        .collect();
                    ScalarGrid { spec, values }
                }
            };
            SmoothedField::from_grid(sigma, grid)
        })
        .collect()
}

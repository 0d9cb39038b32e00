//! Residuals, the matching and keypoint energies, and their gradients.
//!
//! The optimized pose maps scene A coordinates into scene B: a sample `x` of
//! A's active set is compared against B at `Rx + t`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::{robust_kernel, robust_kernel_eval, RobustKernelParams};
use super::pyramid::Level;
use super::schedule::lambda;
use crate::distill::SmoothedField;
use crate::error::{Error, Result};
use crate::geometry::{rotate_jacobian, so3_left_jacobian, PoseParams, RigidTransform, Vec3};

/// Index-aligned 3D correspondences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub q_a: Vec<Vec3>,
    pub q_b: Vec<Vec3>,
}

impl KeypointSet {
    pub fn new(q_a: Vec<Vec3>, q_b: Vec<Vec3>) -> Result<Self> {
        if q_a.len() != q_b.len() {
            return Err(Error::KeypointCountMismatch {
                a: q_a.len(),
                b: q_b.len(),
            });
        }
        if q_a.len() < 3 {
            return Err(Error::InsufficientKeypoints {
                required: 3,
                got: q_a.len(),
            });
        }
        Ok(Self { q_a, q_b })
    }

    pub fn len(&self) -> usize {
        self.q_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_a.is_empty()
    }

    /// `d`: for each scene, the mean over keypoints of the distance to the
    /// farthest other keypoint; averaged over both scenes.
    pub fn mean_max_distance(&self) -> f64 {
        fn one(q: &[Vec3]) -> f64 {
            q.iter()
                .map(|p| q.iter().map(|o| (p - o).norm()).fold(0.0, f64::max))
                .sum::<f64>()
                / q.len() as f64
        }
        0.5 * (one(&self.q_a) + one(&self.q_b))
    }
}

/// `|S_a^σ(x) − S_b^σ(Rx + t)|`.
pub fn residual(x: &Vec3, s_a: &SmoothedField, s_b: &SmoothedField, transform: &RigidTransform) -> f64 {
    (s_a.query(x) - s_b.query(&transform.apply(x))).abs()
}

/// Channel-wise Euclidean residual between two levels.
pub fn level_residual(x: &Vec3, a: &Level, b: &Level, transform: &RigidTransform) -> f64 {
    let y = transform.apply(x);
    a.channels
        .iter()
        .zip(&b.channels)
        .map(|(ca, cb)| (ca.query(x) - cb.query(&y)).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Mean kernel-transformed residual over the sample set.
pub fn matching_loss(
    samples: &[Vec3],
    s_a: &SmoothedField,
    s_b: &SmoothedField,
    transform: &RigidTransform,
    kernel: &RobustKernelParams,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let terms: Vec<f64> = samples
        .par_iter()
        .map(|x| robust_kernel(residual(x, s_a, s_b, transform), kernel))
        .collect();
    Ok(terms.iter().sum::<f64>() / samples.len() as f64)
}

/// `Σ ‖q_a − (R q_b + t)‖²`.
pub fn keypoint_loss(keypoints: &KeypointSet, transform: &RigidTransform) -> f64 {
    keypoints
        .q_a
        .iter()
        .zip(&keypoints.q_b)
        .map(|(a, b)| (a - transform.apply(b)).norm_squared())
        .sum()
}

/// `(1 − λ)·L_match + λ·L_key` at step `t` of `total`.
pub fn total_loss(t: usize, total: usize, match_loss: f64, key_loss: f64) -> f64 {
    let l = lambda(t, total);
    (1.0 - l) * match_loss + l * key_loss
}

/// Gradient with respect to the optimized quantities.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Gradient {
    /// Axis-angle then translation.
    pub pose: [f64; 6],
    pub c: f64,
    pub alpha: f64,
}

impl Gradient {
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            pose: self.pose.map(|g| g * s),
            c: self.c * s,
            alpha: self.alpha * s,
        }
    }

    pub fn add(&self, o: &Gradient) -> Self {
        let mut pose = self.pose;
        for (p, q) in pose.iter_mut().zip(o.pose) {
            *p += q;
        }
        Self {
            pose,
            c: self.c + o.c,
            alpha: self.alpha + o.alpha,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.pose.to_vec();
        v.push(self.c);
        v.push(self.alpha);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.pose.iter().all(|g| g.is_finite()) && self.c.is_finite() && self.alpha.is_finite()
    }
}

fn pose_gradient(pose: &PoseParams, rotated: &Vec3, d_y: &Vec3) -> [f64; 6] {
    let j = rotate_jacobian(&pose.axis_angle, rotated);
    let g_w = j.transpose() * d_y;
    [g_w.x, g_w.y, g_w.z, d_y.x, d_y.y, d_y.z]
}

/// Per-sample contribution before the rotation Jacobian is applied:
/// `∂/∂ω = J_lᵀ (Rx × ∂/∂y)`, so only the cross product is summed.
#[derive(Clone, Copy, Default)]
struct Term {
    value: f64,
    moment: Vec3,
    d_y: Vec3,
    d_c: f64,
    d_alpha: f64,
}

impl Term {
    fn add(&self, o: &Term) -> Term {
        Term {
            value: self.value + o.value,
            moment: self.moment + o.moment,
            d_y: self.d_y + o.d_y,
            d_c: self.d_c + o.d_c,
            d_alpha: self.d_alpha + o.d_alpha,
        }
    }
}

const CHUNK: usize = 256;

/// Matching energy over the sample set and its gradient with respect to the
/// pose and kernel parameters. Spatial gradients of B use the fields'
/// central differences.
pub fn matching_loss_and_gradient(
    samples: &[Vec3],
    a: &Level,
    b: &Level,
    pose: &PoseParams,
    kernel: &RobustKernelParams,
) -> Result<(f64, Gradient)> {
    matching_loss_and_gradient_cached(samples, &source_values(samples, a), b, pose, kernel)
}

/// Scene A's channel values at every sample, sample-major.
pub fn source_values(samples: &[Vec3], a: &Level) -> Vec<f64> {
    samples
        .par_iter()
        .flat_map_iter(|x| a.channels.iter().map(move |ch| ch.query(x)))
        .collect()
}

/// [`matching_loss_and_gradient`] with scene A's values precomputed by
/// [`source_values`]; they do not depend on the pose.
pub fn matching_loss_and_gradient_cached(
    samples: &[Vec3],
    a_values: &[f64],
    b: &Level,
    pose: &PoseParams,
    kernel: &RobustKernelParams,
) -> Result<(f64, Gradient)> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let n_ch = b.channels.len();
    if a_values.len() != samples.len() * n_ch {
        return Err(Error::InvalidInput(format!(
            "{} cached values for {} samples of {} channels",
            a_values.len(),
            samples.len(),
            n_ch
        )));
    }
    let transform = pose.to_transform();
    let c2 = kernel.c * kernel.c;
    let term = |x: &Vec3, va: &[f64]| {
        let rotated = transform.rotation * x;
        let y = rotated + transform.translation;
        let mut r2 = 0.0;
        let mut g_y = Vec3::zeros();
        for (v, cb) in va.iter().zip(&b.channels) {
            let (vb, gb) = cb.query_with_gradient(&y);
            let d = v - vb;
            r2 += d * d;
            g_y += d * gb;
        }
        let k = robust_kernel_eval(r2.sqrt(), kernel);
        let d_y = -(2.0 * k.d_z / c2) * g_y;
        Term {
            value: k.value,
            moment: rotated.cross(&d_y),
            d_y,
            d_c: k.d_c,
            d_alpha: k.d_alpha,
        }
    };
    // fixed-size chunks summed in order keep the result independent of the
    // thread count
    let partial: Vec<Term> = samples
        .par_chunks(CHUNK)
        .zip(a_values.par_chunks(CHUNK * n_ch))
        .map(|(xs, vs)| {
            xs.iter()
                .zip(vs.chunks(n_ch))
                .fold(Term::default(), |acc, (x, va)| acc.add(&term(x, va)))
        })
        .collect();
    let sum = partial.iter().fold(Term::default(), |acc, t| acc.add(t));
    let n = samples.len() as f64;
    let g_w = so3_left_jacobian(&pose.axis_angle).transpose() * sum.moment;
    let grad = Gradient {
        pose: [g_w.x, g_w.y, g_w.z, sum.d_y.x, sum.d_y.y, sum.d_y.z],
        c: sum.d_c,
        alpha: sum.d_alpha,
    };
    Ok((sum.value / n, grad.scaled(1.0 / n)))
}

/// The keypoint energy as optimized, `Σ ‖R q_a + t − q_b‖²`, with its pose
/// gradient. Equals [`keypoint_loss`] evaluated at the inverse transform.
pub fn registration_keypoint_loss(keypoints: &KeypointSet, pose: &PoseParams) -> (f64, [f64; 6]) {
    let transform = pose.to_transform();
    let mut loss = 0.0;
    let mut grad = [0.0; 6];
    for (a, b) in keypoints.q_a.iter().zip(&keypoints.q_b) {
        let rotated = transform.rotation * a;
        let e = rotated + transform.translation - b;
        loss += e.norm_squared();
        let g = pose_gradient(pose, &rotated, &(2.0 * e));
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    (loss, grad)
}

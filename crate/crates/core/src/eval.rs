//! Pose-error metrics: translation and Euler-angle RMSE, and 3D-ADD.

use std::fmt::Write as _;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, Vec3};

pub const EULER_CONVENTION: &str = "XYZ-intrinsic";

/// Pitch closer than this to ±90° makes the Euler decomposition unstable.
const GIMBAL_BAND: f64 = 1e-3;

/// Angles `(a, b, c)` with `R = Rx(a)·Ry(b)·Rz(c)`, in radians, and whether
/// the pitch `b` is within the gimbal band.
pub fn euler_xyz(r: &Matrix3<f64>) -> ([f64; 3], bool) {
    let b = r[(0, 2)].clamp(-1.0, 1.0).asin();
    let gimbal = (b.abs() - std::f64::consts::FRAC_PI_2).abs() < GIMBAL_BAND;
    let (a, c) = if gimbal {
        // only a ± c is determined; put it all in a
        (r[(2, 1)].atan2(r[(1, 1)]), 0.0)
    } else {
        ((-r[(1, 2)]).atan2(r[(2, 2)]), (-r[(0, 1)]).atan2(r[(0, 0)]))
    };
    ([a, b, c], gimbal)
}

pub fn from_euler_xyz(angles: [f64; 3]) -> Matrix3<f64> {
    let [a, b, c] = angles;
    let rx = nalgebra::Rotation3::from_axis_angle(&Vec3::x_axis(), a);
    let ry = nalgebra::Rotation3::from_axis_angle(&Vec3::y_axis(), b);
    let rz = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), c);
    (rx * ry * rz).into_inner()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    /// RMSE over the translation components.
    pub delta_t: f64,
    /// RMSE over the Euler angles of `R_pred·R_gtᵀ`, in degrees.
    pub delta_r: f64,
    pub gimbal_warning: bool,
}

fn rms(v: [f64; 3]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / 3.0).sqrt()
}

pub fn pose_error(pred: &RigidTransform, gt: &RigidTransform) -> PoseError {
    let dt = pred.translation - gt.translation;
    let residual = pred.rotation * gt.rotation.transpose();
    let (angles, gimbal_warning) = euler_xyz(&residual);
    PoseError {
        delta_t: rms([dt.x, dt.y, dt.z]),
        delta_r: rms(angles.map(f64::to_degrees)),
        gimbal_warning,
    }
}

/// Largest pairwise distance.
pub fn diameter(vertices: &[Vec3]) -> f64 {
    let mut d2: f64 = 0.0;
    for (i, p) in vertices.iter().enumerate() {
        for q in &vertices[i + 1..] {
            d2 = d2.max((p - q).norm_squared());
        }
    }
    d2.sqrt()
}

/// Mean displacement of the vertices between the two poses, as a fraction of
/// the vertex set's diameter.
pub fn add3d(vertices: &[Vec3], pred: &RigidTransform, gt: &RigidTransform) -> Result<f64> {
    if vertices.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let diam = diameter(vertices);
    if diam <= 0.0 {
        return Err(Error::ZeroDiameter);
    }
    let mean = vertices
        .iter()
        .map(|v| (pred.apply(v) - gt.apply(v)).norm())
        .sum::<f64>()
        / vertices.len() as f64;
    Ok(mean / diam)
}

/// One row of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub object: String,
    pub delta_t: f64,
    #[serde(rename = "delta_R")]
    pub delta_r: f64,
    pub add3d: Option<f64>,
    pub convention: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub gimbal_warning: bool,
}

impl EvalReport {
    pub fn new(object: impl Into<String>, error: &PoseError, add3d: Option<f64>) -> Self {
        Self {
            object: object.into(),
            delta_t: error.delta_t,
            delta_r: error.delta_r,
            add3d,
            convention: EULER_CONVENTION.to_string(),
            gimbal_warning: error.gimbal_warning,
        }
    }
}

/// Plain-text table; Δt and 3D-ADD are scaled by 10².
pub fn format_table(rows: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<16} {:>10} {:>10} {:>10}", "object", "10²·Δt", "ΔR (°)", "10²·ADD");
    for r in rows {
        let add = r.add3d.map_or_else(|| "-".to_string(), |a| format!("{:.2}", 100.0 * a));
        let _ = writeln!(out, "{:<16} {:>10.2} {:>10.2} {:>10}", r.object, 100.0 * r.delta_t, r.delta_r, add);
    }
    out
}

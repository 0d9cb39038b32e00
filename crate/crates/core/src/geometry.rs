//! Rigid transforms, rotation parameterization, rays, pinhole cameras,
//! ray-pair triangulation and closed-form point-set alignment.

use nalgebra::{Matrix3, Matrix4, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// A rigid motion `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a transform, rejecting rotations that are not proper orthonormal
    /// matrices within 1e-6.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho <= 1e-6) || !((det - 1.0).abs() <= 1e-6) || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidTransform(format!(
                "rotation not orthonormal (|RtR-I|={ortho:.3e}, det={det:.6})"
            )));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_axis_angle(axis_angle: Vec3, translation: Vec3) -> Self {
        PoseParams::new(axis_angle, translation).to_transform()
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 4×4 homogeneous matrix.
    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_matrix4();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 16 {
            return Err(Error::InvalidTransform(format!(
                "expected 16 values, got {}",
                values.len()
            )));
        }
        let m = Matrix4::from_row_slice(values);
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidTransform(format!("bad homogeneous row {bottom:?}")));
        }
        Self::new(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
            m.fixed_view::<3, 1>(0, 3).into_owned(),
        )
    }

    /// Rotation angle of the relative rotation `self⁻¹ ∘ other`, in radians.
    pub fn angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().to_vec().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        RigidTransform::from_row_major(&v).map_err(serde::de::Error::custom)
    }
}

/// Unconstrained pose parameters: axis-angle rotation and translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub axis_angle: Vec3,
    pub translation: Vec3,
}

impl PoseParams {
    pub fn new(axis_angle: Vec3, translation: Vec3) -> Self {
        Self {
            axis_angle,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vec3::zeros(), Vec3::zeros())
    }

    /// Exponential map.
    pub fn to_transform(&self) -> RigidTransform {
        RigidTransform {
            rotation: Rotation3::new(self.axis_angle).into_inner(),
            translation: self.translation,
        }
    }

    /// Logarithm map; the returned angle lies in `[0, π]`.
    pub fn from_transform(t: &RigidTransform) -> Self {
        let rot = Rotation3::from_matrix_unchecked(t.rotation);
        Self::new(rot.scaled_axis(), t.translation)
    }

    /// Wraps the rotation angle back into `[0, π]` without changing the rotation.
    pub fn canonicalize(&mut self) {
        let theta = self.axis_angle.norm();
        if theta <= std::f64::consts::PI || !theta.is_finite() {
            return;
        }
        let axis = self.axis_angle / theta;
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut wrapped = theta.rem_euclid(two_pi);
        if wrapped > std::f64::consts::PI {
            wrapped -= two_pi;
        }
        // negative angle about `axis` == positive angle about `-axis`
        self.axis_angle = axis * wrapped;
    }

    pub fn to_array(&self) -> [f64; 6] {
        let w = &self.axis_angle;
        let t = &self.translation;
        [w.x, w.y, w.z, t.x, t.y, t.z]
    }

    pub fn from_array(a: &[f64; 6]) -> Self {
        Self::new(Vec3::new(a[0], a[1], a[2]), Vec3::new(a[3], a[4], a[5]))
    }
}

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Left Jacobian of SO(3): `Exp(ω + dω) ≈ Exp(J_l(ω) dω) Exp(ω)`.
pub fn so3_left_jacobian(omega: &Vec3) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let k = skew(omega);
    let (a, b) = if theta2 < 1e-10 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Derivative of `R(ω) x` with respect to the axis-angle parameters.
pub fn rotate_jacobian(omega: &Vec3, rotated: &Vec3) -> Matrix3<f64> {
    -skew(rotated) * so3_left_jacobian(omega)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    direction: Unit<Vec3>,
}

impl Ray {
    /// Normalizes `direction`. Panics on a zero vector.
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        let direction = Unit::try_new(direction, 1e-300).expect("ray direction must be non-zero");
        Self { origin, direction }
    }

    pub fn direction(&self) -> &Vec3 {
        self.direction.as_ref()
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction.as_ref() * t
    }
}

/// A pinhole camera using the OpenCV convention (x right, y down, z forward).
/// Pixel `(u, v)` addresses continuous image coordinates; pixel `(i, j)` has its
/// center at `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    #[serde(rename = "pose")]
    pub world_from_camera: RigidTransform,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl PinholeCamera {
    /// Camera at `eye` looking at `target`, with a symmetric field of view.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fov_y_deg: f64, width: u32, height: u32) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            right = forward.cross(&Vec3::new(1.0, 0.0, 0.0));
            if right.norm() < 1e-9 {
                right = forward.cross(&Vec3::new(0.0, 1.0, 0.0));
            }
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        let fy = 0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan();
        Self {
            world_from_camera: RigidTransform {
                rotation,
                translation: eye,
            },
            fx: fy,
            fy,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
        }
    }

    pub fn center(&self) -> Vec3 {
        self.world_from_camera.translation
    }

    pub fn ray(&self, u: f64, v: f64) -> Ray {
        let d_cam = Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        Ray::new(self.center(), self.world_from_camera.apply_vector(&d_cam))
    }

    /// Ray through the center of pixel `(i, j)`.
    pub fn pixel_ray(&self, i: u32, j: u32) -> Ray {
        self.ray(i as f64 + 0.5, j as f64 + 0.5)
    }

    /// Projects a world point; `None` behind the camera.
    pub fn project(&self, x: &Vec3) -> Option<(f64, f64)> {
        let p = self.world_from_camera.inverse().apply(x);
        if p.z <= 1e-12 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    pub fn in_bounds(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    /// Same camera with intrinsics rescaled to a new image width.
    pub fn resized(&self, width: u32) -> Self {
        let s = width as f64 / self.width as f64;
        let height = ((self.height as f64 * s).round() as u32).max(1);
        Self {
            fx: self.fx * s,
            fy: self.fy * s,
            cx: self.cx * s,
            cy: self.cy * s,
            width,
            height,
            ..*self
        }
    }
}

/// Closest approach between two rays: the midpoint of their common
/// perpendicular and its length.
pub fn triangulate(ray_a: &Ray, ray_b: &Ray) -> Result<(Vec3, f64)> {
    let da = ray_a.direction();
    let db = ray_b.direction();
    let w0 = ray_a.origin - ray_b.origin;
    let b = da.dot(db);
    if b.abs() >= 1.0 - 1e-9 {
        return Err(Error::ParallelRays);
    }
    let d = da.dot(&w0);
    let e = db.dot(&w0);
    let denom = 1.0 - b * b;
    let s = (b * e - d) / denom;
    let t = (e - b * d) / denom;
    let pa = ray_a.at(s);
    let pb = ray_b.at(t);
    Ok(((pa + pb) * 0.5, (pa - pb).norm()))
}

/// A 2D annotation of one keypoint in one view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Click {
    pub view_id: usize,
    pub u: f64,
    pub v: f64,
}

/// Least-squares point minimizing the summed squared distance to all rays.
pub fn nearest_point_to_rays(rays: &[Ray]) -> Result<Vec3> {
    let mut a = Matrix3::zeros();
    let mut rhs = Vec3::zeros();
    for ray in rays {
        let d = ray.direction();
        let proj = Matrix3::identity() - d * d.transpose();
        a += proj;
        rhs += proj * ray.origin;
    }
    let eig = a.symmetric_eigenvalues();
    if eig.min() <= 1e-9 * eig.max().max(1.0) {
        return Err(Error::ParallelRays);
    }
    a.lu().solve(&rhs).ok_or(Error::ParallelRays)
}

/// Converts per-keypoint 2D clicks into 3D points. Two views use the
/// common-perpendicular midpoint, more views the least-squares ray solution.
pub fn triangulate_keypoints(clicks: &[Vec<Click>], cameras: &[PinholeCamera]) -> Result<Vec<Vec3>> {
    if clicks.len() < 3 {
        return Err(Error::InsufficientKeypoints {
            required: 3,
            got: clicks.len(),
        });
    }
    clicks
        .iter()
        .enumerate()
        .map(|(k, group)| {
            let mut views: Vec<usize> = group.iter().map(|c| c.view_id).collect();
            views.sort_unstable();
            views.dedup();
            if views.len() < 2 {
                return Err(Error::InsufficientViews {
                    keypoint: k,
                    views: views.len(),
                });
            }
            let rays = group
                .iter()
                .map(|c| {
                    cameras
                        .get(c.view_id)
                        .map(|cam| cam.ray(c.u, c.v))
                        .ok_or(Error::InvalidView(c.view_id))
                })
                .collect::<Result<Vec<_>>>()?;
            if rays.len() == 2 {
                triangulate(&rays[0], &rays[1]).map(|(p, _)| p)
            } else {
                nearest_point_to_rays(&rays)
            }
        })
        .collect()
}

fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / points.len() as f64
}

/// Rigid transform minimizing `Σ ‖q_a − (R q_b + t)‖²` (Kabsch / Horn).
pub fn closed_form_alignment(q_a: &[Vec3], q_b: &[Vec3]) -> Result<RigidTransform> {
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
    let ca = centroid(q_a);
    let cb = centroid(q_b);
    for (name, pts, c) in [("Q_a", q_a, ca), ("Q_b", q_b, cb)] {
        let scatter = pts
            .iter()
            .fold(Matrix3::zeros(), |acc, p| acc + (p - c) * (p - c).transpose());
        let mut ev: Vec<f64> = scatter.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
        if !(ev[1] > 1e-12 * ev[0].max(1e-300)) {
            return Err(Error::DegenerateConfiguration(format!("{name} is collinear")));
        }
    }
    let h = q_b
        .iter()
        .zip(q_a)
        .fold(Matrix3::zeros(), |acc, (b, a)| acc + (b - cb) * (a - ca).transpose());
    let svd = h.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::DegenerateConfiguration("svd failed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::DegenerateConfiguration("svd failed".into()))?;
    let v = v_t.transpose();
    let mut fix = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let rotation = v * fix * u.transpose();
    let translation = ca - rotation * cb;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_transform(rng: &mut impl Rng) -> RigidTransform {
        let w = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let t = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        RigidTransform::from_axis_angle(w, t)
    }

    #[test]
    fn compose_identity_and_inverse() {
        let i = RigidTransform::identity();
        assert_eq!(i.compose(&i), i);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let t = random_transform(&mut rng);
            let id = t.compose(&t.inverse());
            assert!((id.rotation - Matrix3::identity()).abs().max() < 1e-9);
            assert!(id.translation.norm() < 1e-9);
        }
    }

    #[test]
    fn compose_rotation_after_translation() {
        let a = RigidTransform::from_axis_angle(Vec3::z() * std::f64::consts::FRAC_PI_2, Vec3::zeros());
        let b = RigidTransform::from_translation(Vec3::x());
        let p = a.compose(&b).apply(&Vec3::zeros());
        assert!((p - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn row_major_round_trip_and_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_transform(&mut rng);
        let back = RigidTransform::from_row_major(&t.to_row_major()).unwrap();
        assert!((back.rotation - t.rotation).abs().max() < 1e-15);
        let mut bad = t.to_row_major();
        bad[0] *= 2.0;
        assert!(RigidTransform::from_row_major(&bad).is_err());
    }

    #[test]
    fn triangulate_intersecting_rays() {
        let p = Vec3::new(0.3, -0.2, 0.5);
        let a = Ray::new(Vec3::new(2.0, 0.0, 0.0), p - Vec3::new(2.0, 0.0, 0.0));
        let b = Ray::new(Vec3::new(0.0, 2.0, 1.0), p - Vec3::new(0.0, 2.0, 1.0));
        let (q, gap) = triangulate(&a, &b).unwrap();
        assert!((q - p).norm() < 1e-12);
        assert!(gap < 1e-12);
    }

    #[test]
    fn triangulate_skew_rays() {
        let a = Ray::new(Vec3::zeros(), Vec3::x());
        let b = Ray::new(Vec3::new(0.0, 1.0, 1.0), Vec3::y());
        let (q, gap) = triangulate(&a, &b).unwrap();
        // perpendicular runs from (0,0,0) on a to (0,0,1) on b
        assert_relative_eq!(q, Vec3::new(0.0, 0.0, 0.5), epsilon = 1e-12);
        assert_relative_eq!(gap, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn triangulate_parallel_and_antiparallel() {
        let a = Ray::new(Vec3::zeros(), Vec3::x());
        let b = Ray::new(Vec3::y(), Vec3::x());
        let c = Ray::new(Vec3::y(), -Vec3::x());
        assert_eq!(triangulate(&a, &b), Err(Error::ParallelRays));
        assert_eq!(triangulate(&a, &c), Err(Error::ParallelRays));
    }

    fn rig() -> Vec<PinholeCamera> {
        [Vec3::new(3.0, 0.2, 0.1), Vec3::new(2.6, 1.5, -0.3), Vec3::new(2.5, -1.2, 0.8)]
            .iter()
            .map(|&eye| PinholeCamera::look_at(eye, Vec3::zeros(), Vec3::z(), 40.0, 640, 480))
            .collect()
    }

    #[test]
    fn camera_pixel_round_trip() {
        let cam = rig()[1];
        for &(u, v) in &[(0.5, 0.5), (320.0, 240.0), (639.2, 10.7), (17.0, 479.9)] {
            let ray = cam.ray(u, v);
            let (pu, pv) = cam.project(&ray.at(2.7)).unwrap();
            assert!((pu - u).abs() < 1e-6 && (pv - v).abs() < 1e-6);
        }
    }

    #[test]
    fn keypoints_from_projected_clicks() {
        let cams = rig();
        let points = [Vec3::new(0.1, 0.2, -0.1), Vec3::new(-0.3, 0.0, 0.25), Vec3::new(0.0, -0.4, 0.05)];
        let clicks: Vec<Vec<Click>> = points
            .iter()
            .map(|p| {
                (0..2)
                    .map(|i| {
                        let (u, v) = cams[i].project(p).unwrap();
                        Click { view_id: i, u, v }
                    })
                    .collect()
            })
            .collect();
        let out = triangulate_keypoints(&clicks, &cams).unwrap();
        for (q, p) in out.iter().zip(&points) {
            assert!((q - p).norm() < 1e-6);
        }
    }

    #[test]
    fn keypoints_need_two_views() {
        let cams = rig();
        let single = vec![Click { view_id: 0, u: 10.0, v: 10.0 }, Click { view_id: 0, u: 11.0, v: 10.0 }];
        let ok = vec![Click { view_id: 0, u: 300.0, v: 200.0 }, Click { view_id: 1, u: 320.0, v: 240.0 }];
        let err = triangulate_keypoints(&[ok.clone(), single, ok], &cams).unwrap_err();
        assert_eq!(err, Error::InsufficientViews { keypoint: 1, views: 1 });
    }

    #[test]
    fn keypoints_three_views_noisy() {
        // 0.5 px click noise at ~3 units with f≈660 px gives ~2.3e-3 lateral
        // error per ray; three well-separated views keep the triangulated point
        // within a few times that.
        let cams = rig();
        let p = Vec3::new(0.05, -0.1, 0.15);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = rand_distr::Normal::new(0.0, 0.5).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let clicks: Vec<Click> = (0..3)
                .map(|i| {
                    let (u, v) = cams[i].project(&p).unwrap();
                    Click { view_id: i, u: u + rng.sample(normal), v: v + rng.sample(normal) }
                })
                .collect();
            let q = triangulate_keypoints(&[clicks.clone(), clicks.clone(), clicks], &cams).unwrap();
            worst = worst.max((q[0] - p).norm());
        }
        let pixel_angle = 0.5 / cams[0].fy;
        assert!(worst < 10.0 * pixel_angle * 3.0, "worst error {worst}");
    }

    #[test]
    fn alignment_identity_and_recovery() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.2),
            Vec3::new(0.3, 0.4, 1.0),
        ];
        let id = closed_form_alignment(&pts, &pts).unwrap();
        assert!((id.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(id.translation.norm() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let t = random_transform(&mut rng);
            let inv = t.inverse();
            let qb: Vec<Vec3> = pts.iter().map(|p| inv.apply(p)).collect();
            let est = closed_form_alignment(&pts, &qb).unwrap();
            assert!((est.rotation - t.rotation).abs().max() < 1e-9);
            assert!((est.translation - t.translation).norm() < 1e-9);
        }
    }

    #[test]
    fn alignment_rejects_collinear() {
        let pts = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
        assert!(matches!(
            closed_form_alignment(&pts, &pts),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn canonicalize_keeps_rotation() {
        let mut p = PoseParams::new(Vec3::new(0.0, 0.0, 5.0), Vec3::zeros());
        let before = p.to_transform();
        p.canonicalize();
        assert!(p.axis_angle.norm() <= std::f64::consts::PI);
        assert!((p.to_transform().rotation - before.rotation).abs().max() < 1e-12);
    }

    #[test]
    fn left_jacobian_matches_finite_differences() {
        let w = Vec3::new(0.4, -1.1, 0.7);
        let x = Vec3::new(0.3, 0.2, -0.5);
        let j = rotate_jacobian(&w, &(Rotation3::new(w) * x));
        let h = 1e-6;
        for k in 0..3 {
            let mut dw = Vec3::zeros();
            dw[k] = h;
            let fd = (Rotation3::new(w + dw) * x - Rotation3::new(w - dw) * x) / (2.0 * h);
            assert!((fd - j.column(k)).norm() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn exp_log_round_trip(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0, s in 0.0f64..3.1) {
            let w = Vec3::new(x, y, z);
            prop_assume!(w.norm() > 1e-6);
            let w = w.normalize() * s;
            let t = PoseParams::new(w, Vec3::new(y, z, x)).to_transform();
            let back = PoseParams::from_transform(&t).to_transform();
            prop_assert!((back.rotation - t.rotation).abs().max() < 1e-8);
            prop_assert!((back.translation - t.translation).norm() < 1e-12);
        }

        #[test]
        fn exp_map_is_orthonormal(x in -20.0f64..20.0, y in -20.0f64..20.0, z in -20.0f64..20.0) {
            let t = PoseParams::new(Vec3::new(x, y, z), Vec3::zeros()).to_transform();
            prop_assert!(RigidTransform::new(t.rotation, t.translation).is_ok());
        }

        #[test]
        fn compose_matches_sequential_apply(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            let x = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            prop_assert!((a.compose(&b).apply(&x) - a.apply(&b.apply(&x))).norm() < 1e-9);
        }

        #[test]
        fn triangulate_is_symmetric(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = || Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let a = Ray::new(v(), v());
            let b = Ray::new(v(), v());
            if let (Ok((p, g)), Ok((q, h))) = (triangulate(&a, &b), triangulate(&b, &a)) {
                prop_assert!((p - q).norm() < 1e-12);
                prop_assert!((g - h).abs() < 1e-12);
            }
        }

        #[test]
        fn alignment_is_equivariant(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec3> = (0..5).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
            let t = random_transform(&mut rng);
            let qb: Vec<Vec3> = pts.iter().map(|p| t.inverse().apply(p)).collect();
            let g = random_transform(&mut rng);
            let h = random_transform(&mut rng);
            // moving A by g and B by h conjugates the solution: g ∘ T ∘ h⁻¹
            let pa: Vec<Vec3> = pts.iter().map(|p| g.apply(p)).collect();
            let pb: Vec<Vec3> = qb.iter().map(|p| h.apply(p)).collect();
            let est = closed_form_alignment(&pa, &pb).unwrap();
            let expected = g.compose(&t).compose(&h.inverse());
            prop_assert!((est.rotation - expected.rotation).abs().max() < 1e-8);
            prop_assert!((est.translation - expected.translation).norm() < 1e-8);
        }
    }
}

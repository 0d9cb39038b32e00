//! Analytic scenes with known geometry and ground-truth poses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::fields::{DensityScene, Primitive};
use crate::geometry::{PinholeCamera, RigidTransform, Vec3};
use crate::registration::KeypointSet;

/// Opaque slab `|x|, |y| ≤ half_width`, `|z| ≤ half_depth`, seen by one
/// camera on the +z axis at distance `camera_z`.
pub fn slab(density: f64, half_width: f64, half_depth: f64, camera_z: f64) -> DensityScene {
    let camera = PinholeCamera::look_at(
        Vec3::new(0.0, 0.0, camera_z),
        Vec3::zeros(),
        Vec3::new(0.0, 1.0, 0.0),
        30.0,
        33,
        33,
    );
    DensityScene::analytic(
        1.0,
        Primitive::cuboid(Vec3::zeros(), Vec3::new(half_width, half_width, half_depth), density)
            .with_emission([1.0, 1.0, 1.0]),
        vec![camera],
    )
}

/// `n` cameras spread over a sphere of radius `distance`, all looking at the origin.
pub fn camera_rig(n: usize, distance: f64, size: u32) -> Vec<PinholeCamera> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let rho = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let eye = distance * Vec3::new(rho * phi.cos(), rho * phi.sin(), z);
            let up = if z.abs() > 0.9 { Vec3::x() } else { Vec3::z() };
            PinholeCamera::look_at(eye, Vec3::zeros(), up, 40.0, size, size)
        })
        .collect()
}

/// An asymmetric object about 0.5 units across: a box with a sphere and a
/// capsule attached.
pub fn test_object(density: f64) -> Primitive {
    Primitive::union(vec![
        Primitive::cuboid(Vec3::zeros(), Vec3::new(0.22, 0.12, 0.08), density).with_emission([0.8, 0.3, 0.2]),
        Primitive::sphere(Vec3::new(0.12, 0.06, 0.12), 0.1, density).with_emission([0.2, 0.7, 0.3]),
        Primitive::capsule(Vec3::new(-0.16, -0.06, 0.04), Vec3::new(-0.1, -0.14, 0.22), 0.05, density)
            .with_emission([0.2, 0.3, 0.9]),
    ])
}

/// Points on the surface of [`test_object`], spread over all of its parts.
pub fn test_object_keypoints() -> Vec<Vec3> {
    vec![
        Vec3::new(0.22, -0.12, -0.08),
        Vec3::new(-0.22, 0.12, -0.08),
        Vec3::new(0.22, 0.12, -0.08),
        Vec3::new(-0.22, -0.12, 0.08),
        Vec3::new(0.12, 0.06, 0.22),
        Vec3::new(-0.1, -0.14, 0.27),
    ]
}

/// Ground-truth pose (about 38° and 0.19 units) used by the fixtures.
pub fn ground_truth() -> RigidTransform {
    RigidTransform::from_axis_angle(Vec3::new(0.3, -0.4, 0.35), Vec3::new(0.15, -0.1, 0.06))
}

/// Two scenes, index-aligned keypoints, and the pose mapping A into B.
#[derive(Debug, Clone)]
pub struct ScenePair {
    pub a: DensityScene,
    pub b: DensityScene,
    pub ground_truth: RigidTransform,
    pub keypoints: KeypointSet,
    /// The object being registered, in scene A coordinates.
    pub object: Primitive,
}

fn jitter(points: &[Vec3], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    if sigma == 0.0 {
        return points.to_vec();
    }
    let n = Normal::new(0.0, sigma).unwrap();
    points
        .iter()
        .map(|p| p + Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng)))
        .collect()
}

fn noisy_keypoints(q: &[Vec3], gt: &RigidTransform, noise: f64, seed: u64) -> KeypointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q_b: Vec<Vec3> = q.iter().map(|p| gt.apply(p)).collect();
    KeypointSet::new(jitter(q, noise, &mut rng), jitter(&q_b, noise, &mut rng)).expect("fixture keypoints")
}

/// Scene B is scene A, object and cameras, moved by [`ground_truth`];
/// keypoints carry isotropic Gaussian noise of std-dev `noise` in both scenes.
pub fn self_registration_pair(noise: f64, seed: u64) -> ScenePair {
    let gt = ground_truth();
    let object = test_object(80.0);
    let cameras = camera_rig(16, 3.0, 48);
    let moved = cameras
        .iter()
        .map(|c| PinholeCamera {
            world_from_camera: gt.compose(&c.world_from_camera),
            ..*c
        })
        .collect();
    ScenePair {
        a: DensityScene::analytic(1.0, object.clone(), cameras),
        b: DensityScene::analytic(1.0, object.clone().posed(gt), moved),
        ground_truth: gt,
        keypoints: noisy_keypoints(&test_object_keypoints(), &gt, noise, seed),
        object,
    }
}

/// Where the identical twin sits in scene A.
pub fn twin_pose() -> RigidTransform {
    RigidTransform::from_axis_angle(Vec3::new(0.0, 0.0, 0.6), Vec3::new(0.05, 0.5, -0.1))
}

/// A scene with two identical objects. The annotated object moves by
/// [`ground_truth`] between scenes; its twin moves differently, so only
/// samples near the annotated object agree on the pose.
pub fn twin_object_pair(noise: f64, seed: u64) -> ScenePair {
    let gt = ground_truth();
    let object = test_object(80.0);
    let twin_a = twin_pose();
    let drift = RigidTransform::from_axis_angle(Vec3::new(0.0, 0.25, 0.0), Vec3::new(0.06, -0.04, 0.0));
    let twin_b = gt.compose(&twin_a).compose(&drift);
    let cameras = camera_rig(16, 3.0, 48);
    let scene_a = Primitive::union(vec![object.clone(), object.clone().posed(twin_a)]);
    let scene_b = Primitive::union(vec![object.clone().posed(gt), object.clone().posed(twin_b)]);
    ScenePair {
        a: DensityScene::analytic(1.0, scene_a, cameras.clone()),
        b: DensityScene::analytic(1.0, scene_b, cameras),
        ground_truth: gt,
        keypoints: noisy_keypoints(&test_object_keypoints(), &gt, noise, seed),
        object,
    }
}

/// Lattice points within half a lattice step of the primitive's surface.
pub fn surface_vertices(primitive: &Primitive, half_extent: f64, spacing: f64) -> Vec<Vec3> {
    let n = (2.0 * half_extent / spacing).round() as i64;
    let mut out = Vec::new();
    for i in 0..=n {
        for j in 0..=n {
            for k in 0..=n {
                let p = Vec3::new(i as f64, j as f64, k as f64) * spacing - Vec3::repeat(half_extent);
                if primitive.sdf(&p).abs() <= 0.5 * spacing {
                    out.push(p);
                }
            }
        }
    }
    out
}

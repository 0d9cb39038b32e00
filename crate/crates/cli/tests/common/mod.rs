#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fieldreg::fields::{DensityScene, Primitive};
use fieldreg::fixtures;
use fieldreg::geometry::{RigidTransform, Vec3};
use fieldreg::io::{self, KeypointFile, SceneKeypoints};

pub fn fieldreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fieldreg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// The fixture object, posed by `pose`, seen by `cameras` rig cameras.
pub fn object_scene(pose: RigidTransform, cameras: usize) -> DensityScene {
    DensityScene::analytic(
        1.0,
        fixtures::test_object(80.0).posed(pose),
        fixtures::camera_rig(cameras, 3.0, 48),
    )
}

pub fn write_scene(root: &Path, name: &str, scene: &DensityScene) -> PathBuf {
    let dir = root.join(name);
    io::save_scene(&dir, scene).unwrap();
    dir
}

pub fn points(p: &[Vec3]) -> SceneKeypoints {
    SceneKeypoints::Points(p.iter().map(|q| [q.x, q.y, q.z]).collect())
}

pub fn write_keypoints(path: &Path, a: &[Vec3], b: &[Vec3]) {
    io::write_json(path, &KeypointFile { a: points(a), b: points(b) }).unwrap();
}

pub fn sphere_scene(scene_radius: f64, radius: f64, cameras: usize) -> DensityScene {
    DensityScene::analytic(
        scene_radius,
        Primitive::sphere(Vec3::zeros(), radius, 80.0),
        fixtures::camera_rig(cameras, 1.5 * scene_radius, 32),
    )
}

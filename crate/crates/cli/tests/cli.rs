mod common;

use std::fs;

use common::*;
use fieldreg::distill::SmoothedField;
use fieldreg::fields::{threshold, DensityScene, GridSpec, Primitive, ScalarGrid};
use fieldreg::fixtures;
use fieldreg::geometry::{PinholeCamera, RigidTransform, Vec3};
use fieldreg::io::{self, SceneManifest};
use fieldreg_cli::commands::RegisterOutput;
use serde_json::Value;

fn read_level(dir: &std::path::Path, index: usize) -> SmoothedField {
    io::load_distilled(dir).unwrap().levels.remove(index)
}

#[test]
fn distilled_sphere_shell_is_within_two_voxels() {
    let tmp = tempfile::tempdir().unwrap();
    // the S > 0.9 band is δ deep, so the voxel must be at least δ / 2
    let dir = write_scene(tmp.path(), "sphere", &sphere_scene(2.0, 1.0, 6));
    let out = fieldreg(&["distill", path_str(&dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let d = io::load_distilled(&dir).unwrap();
    let spec = d.surface.grid.spec;
    let voxel = spec.min_spacing();
    let mut high = 0;
    for (idx, v) in d.surface.grid.values.iter().enumerate() {
        if *v > 0.9 {
            high += 1;
            let p = spec.node_at(idx);
            assert!((p.norm() - 1.0).abs() <= 2.0 * voxel, "{p:?}");
        }
    }
    assert!(high > 100);
    assert_eq!(d.manifest.epsilon, 0.5);
    assert_eq!(d.manifest.delta, 0.05);
    assert_eq!(d.manifest.sigmas(), fieldreg_cli::workflow::default_sigmas(2.0));
}

#[test]
fn zero_sigma_gives_the_thresholded_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = write_scene(tmp.path(), "sphere", &sphere_scene(1.0, 0.4, 4));
    let out = fieldreg(&["distill", path_str(&dir), "--resolution", "24", "--sigmas", "0"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let d = io::load_distilled(&dir).unwrap();
    let binary = threshold(&d.surface).to_scalar();
    assert_eq!(read_level(&dir, 0).grid().unwrap().values, binary.values);
}

#[test]
fn distill_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = write_scene(tmp.path(), "sphere", &sphere_scene(1.0, 0.3, 4));
    let args = ["distill", path_str(&dir), "--resolution", "20", "--sigmas", "0.05,0.1"];
    assert_eq!(code(&fieldreg(&args)), 0);
    let surface = dir.join(io::SURFACE_DIR);
    let first: Vec<Vec<u8>> = ["surface.raw", "sigma_0.raw", "sigma_1.raw", "surface.json"]
        .iter()
        .map(|f| fs::read(surface.join(f)).unwrap())
        .collect();
    assert_eq!(code(&fieldreg(&args)), 0);
    for (f, bytes) in ["surface.raw", "sigma_0.raw", "sigma_1.raw", "surface.json"].iter().zip(first) {
        assert_eq!(fs::read(surface.join(f)).unwrap(), bytes, "{f}");
    }
}

#[test]
fn missing_density_is_a_manifest_error() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = GridSpec::cube(4, 1.0);
    let scene = DensityScene::from_grid(1.0, ScalarGrid::zeros(spec), None, fixtures::camera_rig(2, 3.0, 8));
    let dir = write_scene(tmp.path(), "grid", &scene);
    fs::remove_file(dir.join(io::DENSITY_FILE)).unwrap();
    let out = fieldreg(&["distill", path_str(&dir)]);
    assert_eq!(code(&out), 2);

    fs::write(dir.join(io::SCENE_MANIFEST), "{\"radius\": 1.0}").unwrap();
    assert_eq!(code(&fieldreg(&["distill", path_str(&dir)])), 2);
}

#[test]
fn grid_scenes_round_trip_through_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = GridSpec::cube(5, 1.0);
    let density = ScalarGrid::from_fn(spec, |p| (p.x + 2.0 * p.y + 3.0 * p.z) as f32);
    let rgb = fieldreg::fields::RgbGrid {
        spec,
        values: (0..spec.len()).map(|i| [i as f32, 0.5, -(i as f32)]).collect(),
    };
    let scene = DensityScene::from_grid(1.0, density, Some(rgb), fixtures::camera_rig(2, 3.0, 8));
    let dir = write_scene(tmp.path(), "grid", &scene);
    let loaded = io::load_scene(&dir).unwrap();
    assert_eq!(loaded.source, scene.source);
    for (l, c) in loaded.cameras.iter().zip(&scene.cameras) {
        assert!((l.world_from_camera.to_matrix4() - c.world_from_camera.to_matrix4()).abs().max() < 1e-12);
        assert_eq!((l.fx, l.width), (c.fx, c.width));
    }
    let raw = fs::read(dir.join(io::DENSITY_FILE)).unwrap();
    assert_eq!(raw.len(), 4 * 125);
    // node (1, 0, 0) is the second value: x varies fastest
    let second = f32::from_le_bytes(raw[4..8].try_into().unwrap());
    assert_eq!(second, spec.node(1, 0, 0).x as f32 + 2.0 * -1.0 + 3.0 * -1.0);
    let manifest: Value = serde_json::from_slice(&fs::read(dir.join(io::SCENE_MANIFEST)).unwrap()).unwrap();
    assert_eq!(manifest["cameras"][0]["pose"].as_array().unwrap().len(), 16);
    assert_eq!(manifest["grid"]["res_x"], 5);
}

fn camera_at(z: f64, size: u32) -> PinholeCamera {
    PinholeCamera::look_at(Vec3::new(0.0, 0.0, z), Vec3::zeros(), Vec3::y(), 30.0, size, size)
}

#[test]
fn empty_scene_renders_the_background() {
    let tmp = tempfile::tempdir().unwrap();
    let mut scene = DensityScene::analytic(1.0, Primitive::union(vec![]), vec![camera_at(3.0, 8)]);
    scene.background = [0.2, 0.4, 0.6];
    let dir = write_scene(tmp.path(), "empty", &scene);
    let png = tmp.path().join("v.png");
    let out = fieldreg(&["render", path_str(&dir), "--view", "0", "--width", "6", "--out", path_str(&png)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let img = image::open(&png).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (6, 6));
    assert!(img.pixels().all(|p| p.0 == [51, 102, 153]));
}

#[test]
fn slab_centre_depth_is_the_slab_distance() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = fixtures::slab(1000.0, 0.5, 0.1, 2.0);
    let h = scene.default_step();
    let dir = write_scene(tmp.path(), "slab", &scene);
    let (png, pfm) = (tmp.path().join("s.png"), tmp.path().join("s.pfm"));
    let out = fieldreg(&[
        "render",
        path_str(&dir),
        "--view",
        "0",
        "--out",
        path_str(&png),
        "--depth",
        path_str(&pfm),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (w, ht, depth) = io::decode_pfm(&fs::read(&pfm).unwrap()).unwrap();
    let centre = depth[(ht / 2 * w + w / 2) as usize] as f64;
    assert!((centre - 1.9).abs() <= 2.0 * h, "{centre}");
}

#[test]
fn bad_view_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = write_scene(tmp.path(), "slab", &fixtures::slab(10.0, 0.5, 0.1, 2.0));
    let png = tmp.path().join("x.png");
    let out = fieldreg(&["render", path_str(&dir), "--view", "3", "--out", path_str(&png)]);
    assert_eq!(code(&out), 2);
    assert!(!png.exists());
}

#[test]
fn point_cloud_lies_on_the_slab_face() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = write_scene(tmp.path(), "slab", &fixtures::slab(1000.0, 0.3, 0.1, 2.0));
    let out_path = tmp.path().join("pts.bin");
    let out = fieldreg(&["export-pointcloud", path_str(&dir), "--out", path_str(&out_path)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let pts = io::decode_points(&fs::read(&out_path).unwrap()).unwrap();
    assert!(!pts.is_empty());
    assert!(pts.iter().all(|p| (p.z - 0.1).abs() < 0.01 && p.x.abs() <= 0.31 && p.y.abs() <= 0.31));

    let cropped = tmp.path().join("crop.bin");
    let out = fieldreg(&[
        "export-pointcloud",
        path_str(&dir),
        "--out",
        path_str(&cropped),
        "--crop=0,0,-1,1,1,1",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let c = io::decode_points(&fs::read(&cropped).unwrap()).unwrap();
    assert!(!c.is_empty() && c.len() < pts.len());
    assert!(c.iter().all(|p| p.x >= 0.0 && p.y >= 0.0));
}

#[test]
fn mismatched_keypoints_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write_scene(tmp.path(), "a", &object_scene(RigidTransform::identity(), 4));
    let q = fixtures::test_object_keypoints();
    let kp = tmp.path().join("kp.json");
    write_keypoints(&kp, &q, &q[..4]);
    let out = fieldreg(&["register", path_str(&a), path_str(&a), path_str(&kp)]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn non_finite_loss_in_every_restart_exits_5() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write_scene(tmp.path(), "a", &object_scene(RigidTransform::identity(), 4));
    let q = fixtures::test_object_keypoints();
    let kp = tmp.path().join("kp.json");
    write_keypoints(&kp, &q, &q);
    let shifted: Vec<Vec3> = q.iter().map(|p| p + Vec3::new(0.1, 0.0, 0.0)).collect();
    write_keypoints(&kp, &q, &shifted);
    let trace = tmp.path().join("trace");
    let out = fieldreg(&[
        "register",
        path_str(&a),
        path_str(&a),
        path_str(&kp),
        "--resolution",
        "24",
        "--restarts",
        "2",
        "--set",
        "lr_translation=1e300",
        "--trace",
        path_str(&trace),
    ]);
    assert_eq!(code(&out), 5, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(trace.join("restart_1.ndjson")).unwrap();
    assert!(!io::parse_ndjson_trace(&text).unwrap().is_empty());
}

#[test]
fn self_registration_recovers_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = object_scene(RigidTransform::identity(), 12);
    let a = write_scene(tmp.path(), "a", &scene);
    let b = write_scene(tmp.path(), "b", &scene);
    let q = fixtures::test_object_keypoints();
    let kp = tmp.path().join("kp.json");
    write_keypoints(&kp, &q, &q);
    let out_path = tmp.path().join("out.json");
    let trace = tmp.path().join("trace");
    let snaps = tmp.path().join("snaps");
    let out = fieldreg(&[
        "register",
        path_str(&a),
        path_str(&b),
        path_str(&kp),
        "--resolution",
        "64",
        "--restarts",
        "2",
        "--set",
        "total_steps=2000",
        "--set",
        "warmup_steps=500",
        "--set",
        "max_samples=5000",
        "--trace",
        path_str(&trace),
        "--snapshots",
        path_str(&snaps),
        "--out",
        path_str(&out_path),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let result: RegisterOutput = serde_json::from_slice(&fs::read(&out_path).unwrap()).unwrap();
    let t = result.transform;
    assert!(t.angle_to(&RigidTransform::identity()).to_degrees() <= 0.5, "{t:?}");
    assert!(t.translation.norm() <= 0.005, "{t:?}");
    assert_eq!(result.restart_traces.len(), 2);
    assert!(result.chosen_restart < 2);
    let chosen = &result.restart_traces[result.chosen_restart];
    assert_eq!(chosen.steps, 2500);
    let records = io::parse_ndjson_trace(&fs::read_to_string(chosen.trace.as_ref().unwrap()).unwrap()).unwrap();
    assert_eq!(records.len(), 2500);
    assert_eq!(records.last().unwrap().loss_total, chosen.final_loss.unwrap());
    let first_line: Value = serde_json::from_str(fs::read_to_string(chosen.trace.as_ref().unwrap()).unwrap().lines().next().unwrap()).unwrap();
    for key in ["step", "lambda", "sigma", "loss_total", "loss_match", "loss_key", "pose", "n_samples", "c", "alpha"] {
        assert!(first_line.get(key).is_some(), "{key}");
    }
    let snapshot = snaps.join("restart0_00000.bin");
    assert!(!io::decode_points(&fs::read(snapshot).unwrap()).unwrap().is_empty());

    // the distilled fields are reused on a second run
    let surface_json = a.join(io::SURFACE_DIR).join(io::SURFACE_MANIFEST);
    let stamp = fs::metadata(&surface_json).unwrap().modified().unwrap();
    let _ = SceneManifest::load(&a).unwrap();
    let again = fieldreg(&[
        "register",
        path_str(&a),
        path_str(&b),
        path_str(&kp),
        "--resolution",
        "64",
        "--restarts",
        "1",
        "--set",
        "total_steps=20",
        "--set",
        "warmup_steps=5",
    ]);
    assert_eq!(code(&again), 0);
    assert_eq!(fs::metadata(&surface_json).unwrap().modified().unwrap(), stamp);
}

#[test]
fn eval_reports_json_and_table() {
    let tmp = tempfile::tempdir().unwrap();
    let pred = tmp.path().join("pred.json");
    let gt = tmp.path().join("gt.json");
    let verts = tmp.path().join("v.bin");
    let report = tmp.path().join("r.json");
    let t = RigidTransform::from_translation(Vec3::new(0.03, 0.0, 0.0));
    io::write_json(&pred, &serde_json::json!({ "transform": t })).unwrap();
    io::write_json(&gt, &serde_json::json!({ "transform": RigidTransform::identity() })).unwrap();
    io::write_atomic(&verts, &io::encode_points(&[Vec3::zeros(), Vec3::new(0.0, 0.0, 0.5)])).unwrap();
    let out = fieldreg(&[
        "eval",
        "--pred",
        path_str(&pred),
        "--gt",
        path_str(&gt),
        "--vertices",
        path_str(&verts),
        "--object",
        "box",
        "--report",
        path_str(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["object"], "box");
    assert_eq!(v["convention"], "XYZ-intrinsic");
    assert!((v["delta_t"].as_f64().unwrap() - 0.03 / 3f64.sqrt()).abs() < 1e-12);
    assert_eq!(v["delta_R"].as_f64().unwrap(), 0.0);
    assert!((v["add3d"].as_f64().unwrap() - 0.06).abs() < 1e-12);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("box") && table.contains("1.73") && table.contains("6.00"), "{table}");
}

use fieldreg::fields::{extract_surface_field, DensityScene, SurfaceConfig};
use fieldreg::fixtures::{self, ScenePair};
use fieldreg::geometry::{closed_form_alignment, PoseParams, RigidTransform, Vec3};
use fieldreg::pipeline::{prepare, FieldKind};
use fieldreg::registration::*;
use fieldreg::Error;

const RES: usize = 64;

fn floor_at(res: usize) -> f64 {
    2.0 / (res - 1) as f64
}

fn floor() -> f64 {
    floor_at(RES)
}

fn pyramids_at(res: usize, a: &DensityScene, b: &DensityScene, sigmas: &[f64]) -> (Pyramid, Pyramid) {
    let config = SurfaceConfig {
        resolution: [res; 3],
        ..SurfaceConfig::default()
    };
    let (_, pa) = prepare(a, &config, sigmas, FieldKind::Surface).unwrap();
    let (_, pb) = prepare(b, &config, sigmas, FieldKind::Surface).unwrap();
    (pa, pb)
}

fn pyramids(a: &DensityScene, b: &DensityScene, sigmas: &[f64]) -> (Pyramid, Pyramid) {
    pyramids_at(RES, a, b, sigmas)
}

fn short_config() -> RegistrationConfig {
    RegistrationConfig {
        total_steps: 2000,
        warmup_steps: 500,
        max_samples: 5000,
        restarts: 1,
        ..RegistrationConfig::default()
    }
}

fn run(pair: &ScenePair, config: &RegistrationConfig, seed: u64) -> Registration {
    run_at(RES, pair, config, seed)
}

fn run_at(res: usize, pair: &ScenePair, config: &RegistrationConfig, seed: u64) -> Registration {
    let sigmas = config.sigma_levels_for(pair.keypoints.mean_max_distance(), floor_at(res));
    let (pa, pb) = pyramids_at(res, &pair.a, &pair.b, &sigmas);
    let problem = Problem {
        a: &pa,
        b: &pb,
        keypoints: &pair.keypoints,
        radius_a: pair.a.radius,
    };
    register(&problem, config, seed, &mut ()).map_err(|f| f.error).unwrap()
}

fn self_pair() -> ScenePair {
    let mut pair = fixtures::self_registration_pair(0.0, 0);
    pair.b = pair.a.clone();
    pair.ground_truth = RigidTransform::identity();
    pair.keypoints = KeypointSet::new(pair.keypoints.q_a.clone(), pair.keypoints.q_a.clone()).unwrap();
    pair
}

fn assert_close(t: &RigidTransform, want: &RigidTransform, deg: f64, dist: f64) {
    let angle = t.angle_to(want).to_degrees();
    let offset = (t.translation - want.translation).norm();
    assert!(angle <= deg && offset <= dist, "{angle}° {offset} from {want:?}: {t:?}");
}

#[test]
fn keypoint_energy_gradient_is_exact() {
    let pair = fixtures::self_registration_pair(0.01, 1);
    for p in [[0.1, -0.2, 0.3, 0.05, 0.0, -0.1], [1.2, 0.4, -0.7, 0.3, -0.2, 0.4], [0.0; 6]] {
        let pose = PoseParams::from_array(&p);
        let (_, g) = registration_keypoint_loss(&pair.keypoints, &pose);
        let f = |q: &[f64]| registration_keypoint_loss(&pair.keypoints, &PoseParams::from_array(q.try_into().unwrap())).0;
        let err = gradient_check(f, &p, &g);
        assert!(err < 1e-5, "{p:?}: {err}");
    }
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let pair = fixtures::self_registration_pair(0.01, 2);
    let sigma = 0.06;
    let (pa, pb) = pyramids(&pair.a, &pair.b, &[sigma]);
    let samples = fixtures::surface_vertices(&pair.object, 0.5, 0.03);
    let lambda = 0.3;
    let loss = |p: &[f64]| -> (f64, Gradient) {
        let pose = PoseParams::from_array(p[..6].try_into().unwrap());
        let kernel = RobustKernelParams { c: p[6], alpha: p[7] };
        let (m, gm) = matching_loss_and_gradient(&samples, &pa.levels[0], &pb.levels[0], &pose, &kernel).unwrap();
        let (k, gk) = registration_keypoint_loss(&pair.keypoints, &pose);
        let g = gm.scaled(1.0 - lambda).add(&Gradient { pose: gk, c: 0.0, alpha: 0.0 }.scaled(lambda));
        ((1.0 - lambda) * m + lambda * k, g)
    };
    let near = PoseParams::from_transform(&pair.ground_truth.compose(&RigidTransform::from_axis_angle(
        Vec3::new(0.03, -0.02, 0.04),
        Vec3::new(0.02, 0.01, -0.015),
    )));
    for (c, alpha) in [(0.1, 1.0), (0.3, -2.0), (0.05, 2.0)] {
        let mut p = near.to_array().to_vec();
        p.extend([c, alpha]);
        let (_, g) = loss(&p);
        let err = gradient_check(|q| loss(q).0, &p, &g.to_vec());
        assert!(err < 5e-2, "c={c} α={alpha}: {err}");
    }
}

#[test]
fn gradient_vanishes_at_the_self_registration_optimum() {
    let pair = self_pair();
    let (pa, pb) = pyramids(&pair.a, &pair.b, &[0.05]);
    let samples = fixtures::surface_vertices(&pair.object, 0.5, 0.03);
    let pose = PoseParams::identity();
    let kernel = RobustKernelParams::default();
    let (m, gm) = matching_loss_and_gradient(&samples, &pa.levels[0], &pb.levels[0], &pose, &kernel).unwrap();
    let (k, gk) = registration_keypoint_loss(&pair.keypoints, &pose);
    assert_eq!((m, k), (0.0, 0.0));
    for g in gm.pose.iter().chain(&gk).chain([&gm.c, &gm.alpha]) {
        assert!(g.abs() < 1e-4, "{gm:?} {gk:?}");
    }
}

#[test]
fn self_registration_recovers_identity_from_far_away() {
    let pair = self_pair();
    let config = RegistrationConfig {
        initial_pose: Some([0.35, -0.3, 0.2, 0.2, -0.15, 0.1]),
        ..short_config()
    };
    let reg = run(&pair, &config, 0);
    assert_close(&reg.transform, &RigidTransform::identity(), 0.5, 0.005 * pair.a.radius);
}

#[test]
fn keypoint_only_converges_to_the_closed_form() {
    let pair = fixtures::self_registration_pair(0.01, 3);
    let config = RegistrationConfig {
        ablations: Ablations {
            keypoint_only: true,
            ..Ablations::default()
        },
        max_samples: 500,
        ..short_config()
    };
    let reg = run(&pair, &config, 0);
    assert!(reg.trace.iter().all(|r| r.lambda == 1.0));
    let oracle = closed_form_alignment(&pair.keypoints.q_a, &pair.keypoints.q_b).unwrap().inverse();
    let want = PoseParams::from_transform(&oracle).to_array();
    for (got, want) in reg.pose.to_array().iter().zip(want) {
        assert!((got - want).abs() < 1e-3, "{:?} vs {want:?}", reg.pose);
    }
}

#[test]
fn runs_are_deterministic_and_audited() {
    let pair = fixtures::self_registration_pair(0.01, 4);
    let config = RegistrationConfig {
        total_steps: 400,
        warmup_steps: 50,
        max_samples: 3000,
        ..short_config()
    };
    let sigmas = config.sigma_levels_for(pair.keypoints.mean_max_distance(), floor());
    let (pa, pb) = pyramids(&pair.a, &pair.b, &sigmas);
    let problem = Problem {
        a: &pa,
        b: &pb,
        keypoints: &pair.keypoints,
        radius_a: 1.0,
    };
    let mut sizes = Vec::new();
    let mut observer = |r: &TraceRecord| sizes.push(r.n_samples);
    let first = register(&problem, &config, 9, &mut observer).map_err(|f| f.error).unwrap();
    let second = register(&problem, &config, 9, &mut ()).map_err(|f| f.error).unwrap();
    assert_eq!(first.trace, second.trace);
    assert_eq!(first.samples.points, second.samples.points);
    assert_eq!(first.trace.len(), 450);
    assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
    assert!(first.samples.len() > first.samples.bootstrap_len);
    assert!(first.samples.audit(&pa, &pb).is_empty());
    for (i, r) in first.trace.iter().enumerate() {
        assert_eq!(r.phase == Phase::Warmup, i < 50);
    }
    assert_eq!(first.trace.last().unwrap().lambda, 0.0);
}

#[test]
fn best_of_picks_the_lowest_final_loss() {
    let pair = fixtures::self_registration_pair(0.01, 5);
    let config = RegistrationConfig {
        total_steps: 200,
        warmup_steps: 20,
        max_samples: 2000,
        restarts: 3,
        seed: 11,
        ..RegistrationConfig::default()
    };
    let sigmas = config.sigma_levels_for(pair.keypoints.mean_max_distance(), floor());
    let (pa, pb) = pyramids(&pair.a, &pair.b, &sigmas);
    let problem = Problem {
        a: &pa,
        b: &pb,
        keypoints: &pair.keypoints,
        radius_a: 1.0,
    };
    let best = register_best_of(&problem, &config, |_| Box::new(())).map_err(|f| f.error).unwrap();
    assert_eq!(best.restarts.len(), 3);
    let losses: Vec<f64> = best
        .restarts
        .iter()
        .map(|r| match r {
            RestartOutcome::Done(r) => r.final_loss,
            RestartOutcome::Failed(f) => panic!("{}", f.error),
        })
        .collect();
    let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(best.best().final_loss, min);
    assert_eq!(best.best().seed, 11 + best.chosen as u64);
}

#[test]
fn non_finite_steps_abort_with_the_trace() {
    let pair = fixtures::self_registration_pair(0.01, 6);
    let config = RegistrationConfig {
        total_steps: 50,
        warmup_steps: 10,
        lr_translation: 1e300,
        restarts: 2,
        ..RegistrationConfig::default()
    };
    let sigmas = config.sigma_levels_for(pair.keypoints.mean_max_distance(), floor());
    let (pa, pb) = pyramids(&pair.a, &pair.b, &sigmas);
    let problem = Problem {
        a: &pa,
        b: &pb,
        keypoints: &pair.keypoints,
        radius_a: 1.0,
    };
    let failure = register_best_of(&problem, &config, |_| Box::new(())).unwrap_err();
    assert!(matches!(failure.error, Error::NonFiniteLoss { .. }));
    assert!(!failure.trace.is_empty());
}

#[test]
fn fields_ignore_emission() {
    let pair = fixtures::self_registration_pair(0.0, 0);
    let colored = DensityScene::analytic(1.0, pair.object.clone().with_emission([0.9, 0.1, 0.3]), pair.a.cameras.clone());
    let config = SurfaceConfig {
        resolution: [32; 3],
        ..SurfaceConfig::default()
    };
    let plain = extract_surface_field(&pair.a, &config).unwrap();
    let lit = extract_surface_field(&colored, &config).unwrap();
    let bits = |g: &fieldreg::fields::SurfaceFieldGrid| g.grid.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&plain), bits(&lit));
}

fn transformed(scene: &DensityScene, object: fieldreg::fields::Primitive, g: &RigidTransform) -> DensityScene {
    let mut cameras = scene.cameras.clone();
    for c in &mut cameras {
        c.world_from_camera = g.compose(&c.world_from_camera);
    }
    DensityScene::analytic(scene.radius, object.posed(*g), cameras)
}

#[test]
fn registration_is_equivariant() {
    let pair = fixtures::self_registration_pair(0.01, 8);
    let g = RigidTransform::from_axis_angle(Vec3::new(0.0, 0.5, 0.2), Vec3::new(0.05, 0.0, -0.05));
    let object_b = pair.object.clone().posed(pair.ground_truth);
    let moved = ScenePair {
        a: transformed(&pair.a, pair.object.clone(), &g),
        b: transformed(&pair.b, object_b, &g),
        ground_truth: g.compose(&pair.ground_truth).compose(&g.inverse()),
        keypoints: KeypointSet::new(
            pair.keypoints.q_a.iter().map(|p| g.apply(p)).collect(),
            pair.keypoints.q_b.iter().map(|p| g.apply(p)).collect(),
        )
        .unwrap(),
        object: pair.object.clone().posed(g),
    };
    let config = RegistrationConfig {
        total_steps: 10_000,
        warmup_steps: 1000,
        ..short_config()
    };
    // axis-aligned grids break exact symmetry; the fine grid keeps it within tolerance
    let t = run_at(128, &pair, &config, 0).transform;
    let t_moved = run_at(128, &moved, &config, 0).transform;
    assert_close(&t_moved, &g.compose(&t).compose(&g.inverse()), 1.0, 0.01);
}

//! Metropolis-Hastings style active-set maintenance, bootstrapped from keypoints.

use rustc_hash::FxHashMap;
use std::f64::consts::E;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distill::mlp::uniform_in_ball;
use crate::error::{Error, Result};
use crate::geometry::{PoseParams, RigidTransform, Vec3};
use crate::registration::loss::level_residual;
use crate::registration::pyramid::{Level, Pyramid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Proposal half-width ρ.
    pub rho: f64,
    /// Radius of scene A's ball; candidates outside are rejected.
    pub radius: f64,
    pub max_samples: usize,
    /// Replace the set by fresh uniform samples of the ball at each update.
    pub uniform: bool,
    pub uniform_samples: usize,
}

impl SamplerConfig {
    pub fn for_radius(radius: f64) -> Self {
        Self {
            rho: radius / 100.0,
            radius,
            max_samples: 20_000,
            uniform: false,
            uniform_samples: 4096,
        }
    }
}

/// Parameters in force during one update, kept for auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub step: usize,
    pub level: usize,
    pub sigma: f64,
    pub xi_s: f64,
    pub xi_r: f64,
    pub pose: PoseParams,
    pub len_before: usize,
    pub len_after: usize,
    pub capped: bool,
}

/// Uniform hash over cells of side `cell` for minimum-distance queries.
#[derive(Debug, Clone)]
struct SpatialHash {
    cell: f64,
    cells: FxHashMap<[i64; 3], Vec<u32>>,
}

impl SpatialHash {
    fn new(cell: f64) -> Self {
        Self {
            cell,
            cells: FxHashMap::default(),
        }
    }

    fn key(&self, p: &Vec3) -> [i64; 3] {
        [
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        ]
    }

    fn insert(&mut self, p: &Vec3, idx: usize) {
        self.cells.entry(self.key(p)).or_default().push(idx as u32);
    }

    /// True when some indexed point lies strictly closer than `cell` to `p`.
    fn any_within(&self, points: &[Vec3], p: &Vec3) -> bool {
        let k = self.key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        if ids.iter().any(|&i| (points[i as usize] - p).norm() < self.cell) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// The active set `A^(t)` together with the history needed to audit it.
#[derive(Debug, Clone)]
pub struct ActiveSampleSet {
    pub points: Vec<Vec3>,
    pub config: SamplerConfig,
    pub xi_s: f64,
    pub xi_r: f64,
    pub seed: u64,
    /// Leading points that came from the bootstrap rather than acceptance.
    pub bootstrap_len: usize,
    pub history: Vec<UpdateRecord>,
    rng: ChaCha8Rng,
    hash: SpatialHash,
}

/// `max_{x∈A} S_a^σ(x) / e²`.
pub fn compute_xi_s(points: &[Vec3], s_a: &Level) -> f64 {
    let values: Vec<f64> = points.par_iter().map(|x| s_a.intensity(x)).collect();
    values.into_iter().fold(0.0, f64::max) / (E * E)
}

impl ActiveSampleSet {
    /// `A^(0) = Q_a`, or a uniform draw when the sampler is in uniform mode.
    pub fn bootstrap(q_a: &[Vec3], config: SamplerConfig, seed: u64) -> Result<Self> {
        if q_a.is_empty() {
            return Err(Error::EmptyKeypoints);
        }
        let mut set = Self {
            points: Vec::new(),
            config,
            xi_s: 0.0,
            xi_r: 0.0,
            seed,
            bootstrap_len: 0,
            history: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            hash: SpatialHash::new(config.rho / 10.0),
        };
        if config.uniform {
            set.resample_uniform();
        } else {
            for p in q_a {
                set.push(*p);
            }
        }
        set.bootstrap_len = set.points.len();
        Ok(set)
    }

    fn push(&mut self, p: Vec3) {
        self.hash.insert(&p, self.points.len());
        self.points.push(p);
    }

    fn resample_uniform(&mut self) {
        self.points.clear();
        self.hash = SpatialHash::new(self.config.rho / 10.0);
        for _ in 0..self.config.uniform_samples {
            let p = uniform_in_ball(&mut self.rng, self.config.radius);
            self.push(p);
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn capped(&self) -> bool {
        self.points.len() >= self.config.max_samples
    }

    /// One round of proposal and acceptance. Returns the number of accepted
    /// candidates.
    pub fn update(
        &mut self,
        step: usize,
        pyramid_a: &Pyramid,
        pyramid_b: &Pyramid,
        level: usize,
        pose: &PoseParams,
        kernel_c: f64,
    ) -> usize {
        let len_before = self.points.len();
        let transform = pose.to_transform();
        let (s_a, s_b) = (&pyramid_a.levels[level], &pyramid_b.levels[level]);
        if self.config.uniform {
            self.resample_uniform();
            self.history.push(UpdateRecord {
                step,
                level,
                sigma: s_a.sigma,
                xi_s: 0.0,
                xi_r: kernel_c,
                pose: *pose,
                len_before,
                len_after: self.points.len(),
                capped: false,
            });
            return self.points.len();
        }

        self.xi_s = compute_xi_s(&self.points, s_a);
        self.xi_r = kernel_c;
        let rho = self.config.rho;
        let candidates: Vec<Vec3> = (0..len_before)
            .map(|i| {
                let offset = Vec3::new(
                    self.rng.gen_range(-1.0..=1.0),
                    self.rng.gen_range(-1.0..=1.0),
                    self.rng.gen_range(-1.0..=1.0),
                );
                self.points[i] + rho * offset
            })
            .collect();
        let accepted: Vec<bool> = candidates
            .par_iter()
            .map(|x| self.accepts(x, s_a, s_b, &transform, self.xi_s, self.xi_r))
            .collect();

        let room = self.config.max_samples.saturating_sub(len_before);
        let mut capped = false;
        let mut taken = Vec::new();
        for (x, ok) in candidates.into_iter().zip(accepted) {
            if !ok {
                continue;
            }
            if taken.len() == room {
                capped = true;
                break;
            }
            taken.push(x);
        }
        let n = taken.len();
        for x in taken {
            self.push(x);
        }
        self.history.push(UpdateRecord {
            step,
            level,
            sigma: s_a.sigma,
            xi_s: self.xi_s,
            xi_r: self.xi_r,
            pose: *pose,
            len_before,
            len_after: self.points.len(),
            capped: capped || self.capped(),
        });
        n
    }

    /// The three acceptance predicates plus containment in the ball. The
    /// distance test only sees the set as it was before this update because
    /// new points are inserted after every candidate has been judged.
    fn accepts(&self, x: &Vec3, s_a: &Level, s_b: &Level, transform: &RigidTransform, xi_s: f64, xi_r: f64) -> bool {
        x.norm() <= self.config.radius
            && s_a.intensity(x) >= xi_s
            && level_residual(x, s_a, s_b, transform) <= xi_r
            && !self.hash.any_within(&self.points, x)
    }

    /// Re-checks every accepted point against the parameters recorded at its
    /// acceptance. Returns the indices that fail.
    pub fn audit(&self, pyramid_a: &Pyramid, pyramid_b: &Pyramid) -> Vec<usize> {
        let mut failures = Vec::new();
        if self.config.uniform {
            return failures;
        }
        let mut hash = SpatialHash::new(self.config.rho / 10.0);
        for (i, p) in self.points[..self.bootstrap_len].iter().enumerate() {
            hash.insert(p, i);
        }
        let mut indexed = self.bootstrap_len;
        for rec in &self.history {
            if rec.len_before != indexed {
                failures.extend(rec.len_before..rec.len_after);
                continue;
            }
            let (s_a, s_b) = (&pyramid_a.levels[rec.level], &pyramid_b.levels[rec.level]);
            let transform = rec.pose.to_transform();
            let prefix = &self.points[..rec.len_before];
            for i in rec.len_before..rec.len_after {
                let x = &self.points[i];
                let ok = x.norm() <= self.config.radius
                    && s_a.intensity(x) >= rec.xi_s
                    && level_residual(x, s_a, s_b, &transform) <= rec.xi_r
                    && !hash.any_within(prefix, x);
                if !ok {
                    failures.push(i);
                }
            }
            for i in rec.len_before..rec.len_after {
                hash.insert(&self.points[i], i);
            }
            indexed = rec.len_after;
        }
        failures
    }
}

//! A small IPE-conditioned multilayer perceptron trained with the Poisson loss.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ipe::ipe_encode;
use crate::geometry::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    /// IPE frequency bands.
    pub levels: usize,
    pub width: usize,
    /// Number of weight layers (hidden layers + output layer).
    pub depth: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            levels: 8,
            width: 256,
            depth: 8,
            steps: 20_000,
            batch_size: 1024,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Dense {
    w: DMatrix<f64>,
    b: DVector<f64>,
}

/// `softplus(z)`, always positive.
fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Fully connected ReLU network over IPE features with a softplus output.
/// Inputs are scaled by `1 / scale` before encoding.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Dense>,
    levels: usize,
    sigma: f64,
    scale: f64,
}

impl Mlp {
    pub fn new(config: &MlpConfig, sigma: f64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let input = 6 * config.levels;
        let depth = config.depth.max(1);
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let fan_in = if l == 0 { input } else { config.width };
            let fan_out = if l + 1 == depth { 1 } else { config.width };
            let std = (2.0 / fan_in as f64).sqrt();
            let w = DMatrix::from_fn(fan_out, fan_in, |_, _| std * rng.sample::<f64, _>(StandardNormal));
            layers.push(Dense {
                w,
                b: DVector::zeros(fan_out),
            });
        }
        Self {
            layers,
            levels: config.levels,
            sigma,
            scale,
        }
    }

    fn encode(&self, xs: &[Vec3]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(6 * self.levels, xs.len());
        for (c, x) in xs.iter().enumerate() {
            let f = ipe_encode(&(x / self.scale), self.sigma / self.scale, self.levels);
            m.column_mut(c).copy_from_slice(&f.values);
        }
        m
    }

    /// Forward pass keeping every pre-activation.
    fn forward(&self, input: DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = vec![input];
        for (l, layer) in self.layers.iter().enumerate() {
            let prev = acts.last().unwrap();
            let prev = if l == 0 { prev.clone() } else { prev.map(|v| v.max(0.0)) };
            let mut z = &layer.w * prev;
            for mut col in z.column_iter_mut() {
                col += &layer.b;
            }
            acts.push(z);
        }
        acts
    }

    pub fn predict_batch(&self, xs: &[Vec3]) -> Vec<f64> {
        let acts = self.forward(self.encode(xs));
        acts.last().unwrap().iter().map(|&z| softplus(z)).collect()
    }

    pub fn predict(&self, x: &Vec3) -> f64 {
        self.predict_batch(std::slice::from_ref(x))[0]
    }
}

/// `x − y log x`, the Poisson negative log-likelihood up to a constant.
pub fn poisson(pred: f64, target: f64) -> f64 {
    if target == 0.0 {
        pred
    } else {
        pred - target * pred.ln()
    }
}

struct AdamState {
    m: Vec<(DMatrix<f64>, DVector<f64>)>,
    v: Vec<(DMatrix<f64>, DVector<f64>)>,
    t: i32,
}

/// Trains `net` on `(x, target(x))` pairs drawn by `sample`. Returns the mean
/// loss of every step.
pub(crate) fn train(
    net: &mut Mlp,
    config: &MlpConfig,
    mut sample: impl FnMut(&mut ChaCha8Rng) -> Vec3,
    target: impl Fn(&Vec3) -> f64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let zeros = |net: &Mlp| {
        net.layers
            .iter()
            .map(|l| (DMatrix::zeros(l.w.nrows(), l.w.ncols()), DVector::zeros(l.b.len())))
            .collect::<Vec<_>>()
    };
    let mut adam = AdamState {
        m: zeros(net),
        v: zeros(net),
        t: 0,
    };
    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut history = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let xs: Vec<Vec3> = (0..config.batch_size).map(|_| sample(&mut rng)).collect();
        let ys: Vec<f64> = xs.iter().map(&target).collect();
        let acts = net.forward(net.encode(&xs));
        let out = acts.last().unwrap();
        let n = xs.len() as f64;
        let mut loss = 0.0;
        let mut delta = DMatrix::zeros(1, xs.len());
        for c in 0..xs.len() {
            let z = out[(0, c)];
            let pred = softplus(z).max(1e-12);
            loss += poisson(pred, ys[c]);
            delta[(0, c)] = (1.0 - ys[c] / pred) * sigmoid(z) / n;
        }
        history.push(loss / n);

        adam.t += 1;
        let bc1 = 1.0 - b1.powi(adam.t);
        let bc2 = 1.0 - b2.powi(adam.t);
        for l in (0..net.layers.len()).rev() {
            let input = if l == 0 { acts[0].clone() } else { acts[l].map(|v| v.max(0.0)) };
            let gw = &delta * input.transpose();
            let gb = delta.column_sum();
            if l > 0 {
                let mut back = net.layers[l].w.transpose() * &delta;
                back.zip_apply(&acts[l], |d, z| {
                    if z <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = back;
            }
            let (mw, mb) = &mut adam.m[l];
            let (vw, vb) = &mut adam.v[l];
            let layer = &mut net.layers[l];
            for ((p, g), (m, v)) in layer.w.iter_mut().zip(gw.iter()).zip(mw.iter_mut().zip(vw.iter_mut())) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= config.lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            }
            for ((p, g), (m, v)) in layer.b.iter_mut().zip(gb.iter()).zip(mb.iter_mut().zip(vb.iter_mut())) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= config.lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            }
        }
    }
    history
}

/// Uniform sample in the ball of radius `r`.
pub fn uniform_in_ball(rng: &mut impl Rng, r: f64) -> Vec3 {
    loop {
        let p = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if p.norm_squared() <= 1.0 {
            return p * r;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MlpConfig {
        MlpConfig {
            levels: 4,
            width: 32,
            depth: 3,
            steps: 600,
            batch_size: 128,
            lr: 3e-3,
            seed: 5,
        }
    }

    #[test]
    fn constant_target_is_learned() {
        let cfg = small();
        let mut net = Mlp::new(&cfg, 0.1, 1.0);
        train(&mut net, &cfg, |rng| uniform_in_ball(rng, 1.0), |_| 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let p = net.predict(&uniform_in_ball(&mut rng, 1.0));
            assert!((p - 0.3).abs() < 0.02, "{p}");
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let cfg = MlpConfig { steps: 1, batch_size: 8, ..small() };
        let xs: Vec<Vec3> = (0..8).map(|i| Vec3::new(0.1 * i as f64, -0.05 * i as f64, 0.2)).collect();
        let target = |x: &Vec3| 0.5 + 0.3 * x.x;
        let net = Mlp::new(&cfg, 0.05, 1.0);
        let loss = |net: &Mlp| {
            net.predict_batch(&xs).iter().zip(&xs).map(|(p, x)| poisson(*p, target(x))).sum::<f64>() / 8.0
        };
        // analytic gradient of the output bias
        let acts = net.forward(net.encode(&xs));
        let out = acts.last().unwrap();
        let analytic: f64 = (0..8)
            .map(|c| {
                let z = out[(0, c)];
                (1.0 - target(&xs[c]) / softplus(z)) * sigmoid(z) / 8.0
            })
            .sum();
        let h = 1e-6;
        let mut plus = net.clone();
        plus.layers.last_mut().unwrap().b[0] += h;
        let mut minus = net.clone();
        minus.layers.last_mut().unwrap().b[0] -= h;
        let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
        assert!((fd - analytic).abs() < 1e-6 * (1.0 + analytic.abs()));
    }
}

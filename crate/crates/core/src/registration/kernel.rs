//! The adaptive robust kernel κ(r; c, α) and its partial derivatives.

use serde::{Deserialize, Serialize};

pub const ALPHA_MIN: f64 = -10.0;
pub const ALPHA_MAX: f64 = 2.0;

/// Below this distance from α = 0 or α = 2 the closed-form limits are used.
const LIMIT_BAND: f64 = 1e-6;
/// α derivatives are evaluated this far from α = 0 and α = 2 (where the
/// derivative grows like `ln|α − 2|`).
const ALPHA_NUDGE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustKernelParams {
    pub c: f64,
    pub alpha: f64,
}

impl Default for RobustKernelParams {
    fn default() -> Self {
        Self { c: 0.3, alpha: 2.0 }
    }
}

/// κ as a function of `z = (r / c)²`.
fn rho(z: f64, alpha: f64) -> f64 {
    if (alpha - 2.0).abs() < LIMIT_BAND {
        0.5 * z
    } else if alpha.abs() < LIMIT_BAND {
        (0.5 * z).ln_1p()
    } else {
        let b = (alpha - 2.0).abs();
        b / alpha * ((z / b + 1.0).powf(alpha / 2.0) - 1.0)
    }
}

/// ∂κ/∂z, smooth in α including both limits.
fn rho_z(z: f64, alpha: f64) -> f64 {
    if (alpha - 2.0).abs() < LIMIT_BAND {
        0.5
    } else {
        let b = (alpha - 2.0).abs();
        0.5 * (z / b + 1.0).powf(alpha / 2.0 - 1.0)
    }
}

/// ∂κ/∂α of the general form, valid away from α ∈ {0, 2}.
fn rho_alpha_general(z: f64, alpha: f64) -> f64 {
    let b = 2.0 - alpha;
    let u = 1.0 + z / b;
    let p = u.powf(alpha / 2.0);
    -2.0 / (alpha * alpha) * (p - 1.0) + b / (2.0 * alpha) * p * u.ln() + p / u * z / (2.0 * b)
}

fn rho_alpha(z: f64, alpha: f64) -> f64 {
    let a = if (alpha - 2.0).abs() < ALPHA_NUDGE {
        2.0 - ALPHA_NUDGE
    } else if alpha.abs() < ALPHA_NUDGE {
        if alpha < 0.0 {
            -ALPHA_NUDGE
        } else {
            ALPHA_NUDGE
        }
    } else {
        alpha
    };
    rho_alpha_general(z, a)
}

/// `(|α−2|/α)·[((r/c)²/|α−2| + 1)^{α/2} − 1]`, with the α → 2 and α → 0 limits.
pub fn robust_kernel(residual: f64, params: &RobustKernelParams) -> f64 {
    let z = (residual / params.c).powi(2);
    rho(z, params.alpha)
}

/// Kernel value with its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelEval {
    pub value: f64,
    /// ∂κ/∂z where `z = (r/c)²`; multiply by `2r/c²` for ∂κ/∂r.
    pub d_z: f64,
    pub d_c: f64,
    pub d_alpha: f64,
}

pub fn robust_kernel_eval(residual: f64, params: &RobustKernelParams) -> KernelEval {
    let z = (residual / params.c).powi(2);
    let alpha = params.alpha;
    if (alpha - 2.0).abs() >= ALPHA_NUDGE && alpha.abs() >= ALPHA_NUDGE {
        // shares one power and one log across value and derivatives
        let b = 2.0 - alpha;
        let u = 1.0 + z / b;
        let ln_u = u.ln();
        let p = (0.5 * alpha * ln_u).exp();
        let d_z = 0.5 * p / u;
        return KernelEval {
            value: b / alpha * (p - 1.0),
            d_z,
            d_c: d_z * (-2.0 * z / params.c),
            d_alpha: -2.0 / (alpha * alpha) * (p - 1.0) + b / (2.0 * alpha) * p * ln_u + p / u * z / (2.0 * b),
        };
    }
    let d_z = rho_z(z, params.alpha);
    KernelEval {
        value: rho(z, params.alpha),
        d_z,
        d_c: d_z * (-2.0 * z / params.c),
        d_alpha: rho_alpha(z, params.alpha),
    }
}

/// `ln Z` for the density `exp(−κ(r; c, α)) / Z` on residuals in
/// `[0, r_max]`, with its partial derivatives. Fitting (c, α) by the mean
/// of `κ + ln Z` over the residuals is the adaptive form of the kernel;
/// minimizing κ alone would drive c up without bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPartition {
    pub value: f64,
    pub d_c: f64,
    pub d_alpha: f64,
}

/// Simpson intervals for `u = r/c` in `[0, min(U, U_SPLIT)]` and, past that,
/// for `ln u`.
const NEAR_INTERVALS: usize = 512;
const TAIL_INTERVALS: usize = 256;
const U_SPLIT: f64 = 16.0;

fn simpson_weight(i: usize, n: usize) -> f64 {
    if i == 0 || i == n {
        1.0
    } else if i % 2 == 1 {
        4.0
    } else {
        2.0
    }
}

pub fn log_partition(params: &RobustKernelParams, r_max: f64) -> LogPartition {
    let c = params.c;
    let upper = r_max / c;
    // Σ w·f, Σ w·f·∂κ/∂c, Σ w·f·∂κ/∂α over nodes in u with weights in u
    let mut acc = [0.0f64; 3];
    let mut add = |u: f64, w: f64| {
        let e = robust_kernel_eval(c * u, params);
        let f = (-e.value).exp();
        if f > 0.0 {
            acc[0] += w * f;
            acc[1] += w * f * e.d_c;
            acc[2] += w * f * e.d_alpha;
        }
    };
    let near = upper.min(U_SPLIT);
    let h = near / NEAR_INTERVALS as f64;
    for i in 0..=NEAR_INTERVALS {
        add(i as f64 * h, simpson_weight(i, NEAR_INTERVALS) * h / 3.0);
    }
    if upper > U_SPLIT {
        let (s0, s1) = (U_SPLIT.ln(), upper.ln());
        let h = (s1 - s0) / TAIL_INTERVALS as f64;
        for i in 0..=TAIL_INTERVALS {
            let u = (s0 + i as f64 * h).exp();
            add(u, simpson_weight(i, TAIL_INTERVALS) * h / 3.0 * u);
        }
    }
    // Z = c·I with I the integral in u; nodes in r are c·u
    let integral = acc[0];
    LogPartition {
        value: (c * integral).ln(),
        d_c: -acc[1] / integral,
        d_alpha: -acc[2] / integral,
    }
}

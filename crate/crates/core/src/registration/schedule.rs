//! λ and σ schedules.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// `½(1 + cos(tπ/T))`: 1 at `t = 0`, 0 at `t = T`.
pub fn lambda(t: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    0.5 * (1.0 + (t as f64 / total as f64 * PI).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub total_steps: usize,
    pub sigma_start: f64,
    pub sigma_end: f64,
}

impl Schedule {
    pub fn lambda(&self, t: usize) -> f64 {
        lambda(t, self.total_steps)
    }

    /// σ follows the same cosine profile from `sigma_start` to `sigma_end`.
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma_end + (self.sigma_start - self.sigma_end) * self.lambda(t)
    }
}

/// `n` geometrically spaced values from `start` down to `end` (both > 0).
pub fn geometric_levels(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let ratio = (end / start).powf(1.0 / (n - 1) as f64);
            let mut v: Vec<f64> = (0..n).map(|i| start * ratio.powi(i as i32)).collect();
            v[n - 1] = end;
            v
        }
    }
}

/// Index of the level closest to `sigma`; ties go to the smaller index.
pub fn nearest_level(levels: &[f64], sigma: f64) -> usize {
    let mut best = 0;
    for (i, s) in levels.iter().enumerate() {
        if (s - sigma).abs() < (levels[best] - sigma).abs() {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_endpoints_are_exact() {
        for total in [2, 10, 10_000, 12_346] {
            assert_eq!(lambda(0, total), 1.0);
            assert_eq!(lambda(total, total), 0.0);
            if total % 2 == 0 {
                assert_eq!(lambda(total / 2, total), 0.5);
            }
        }
    }

    #[test]
    fn sigma_is_monotone_between_endpoints() {
        let s = Schedule {
            total_steps: 1000,
            sigma_start: 0.08,
            sigma_end: 0.04,
        };
        assert_eq!(s.sigma(0), 0.08);
        assert_eq!(s.sigma(1000), 0.04);
        let vals: Vec<f64> = (0..=1000).map(|t| s.sigma(t)).collect();
        assert!(vals.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn levels_and_lookup() {
        let l = geometric_levels(0.08, 0.04, 5);
        assert_eq!(l.len(), 5);
        assert_eq!(l[0], 0.08);
        assert_eq!(l[4], 0.04);
        assert!(l.windows(2).all(|w| w[1] < w[0]));
        assert!((l[1] / l[0] - l[2] / l[1]).abs() < 1e-12);
        assert_eq!(nearest_level(&l, 0.1), 0);
        assert_eq!(nearest_level(&l, 0.0), 4);
        assert_eq!(nearest_level(&l, l[2] + 1e-9), 2);
    }
}

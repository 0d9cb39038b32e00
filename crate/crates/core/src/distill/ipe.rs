use crate::geometry::Vec3;

/// Integrated positional encoding of a point under isotropic Gaussian blur.
///
/// Level `l` contributes `sin(2ˡ x)·a_l` then `cos(2ˡ x)·a_l` for the three
/// coordinates, with `a_l = exp(-4ˡ σ² / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IpeFeatures {
    pub levels: usize,
    pub values: Vec<f64>,
}

impl IpeFeatures {
    pub fn level(&self, l: usize) -> &[f64] {
        &self.values[6 * l..6 * (l + 1)]
    }
}

pub fn attenuation(level: usize, sigma: f64) -> f64 {
    (-(4f64.powi(level as i32)) * sigma * sigma / 2.0).exp()
}

pub fn ipe_encode(x: &Vec3, sigma: f64, levels: usize) -> IpeFeatures {
    let mut values = Vec::with_capacity(6 * levels);
    for l in 0..levels {
        let freq = 2f64.powi(l as i32);
        let a = attenuation(l, sigma);
        values.extend(x.iter().map(|c| (freq * c).sin() * a));
        values.extend(x.iter().map(|c| (freq * c).cos() * a));
    }
    IpeFeatures { levels, values }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_plain_encoding() {
        let x = Vec3::new(0.3, -1.2, 2.0);
        let f = ipe_encode(&x, 0.0, 4);
        assert_eq!(f.values.len(), 24);
        for l in 0..4 {
            let s = 2f64.powi(l as i32);
            let lv = f.level(l);
            for a in 0..3 {
                assert_eq!(lv[a], (s * x[a]).sin());
                assert_eq!(lv[3 + a], (s * x[a]).cos());
            }
        }
    }

    #[test]
    fn large_sigma_kills_top_level() {
        let f = ipe_encode(&Vec3::new(0.3, 0.1, -0.7), 2.0, 6);
        assert!(f.level(5).iter().all(|v| v.abs() < 1e-300));
    }

    #[test]
    fn origin_gives_attenuation_factors() {
        let f = ipe_encode(&Vec3::zeros(), 0.3, 5);
        for l in 0..5 {
            let lv = f.level(l);
            assert!(lv[..3].iter().all(|v| *v == 0.0));
            assert!(lv[3..].iter().all(|v| (*v - attenuation(l, 0.3)).abs() < 1e-15));
        }
    }

    #[test]
    fn level_norm_is_non_increasing() {
        for &sigma in &[0.0, 0.05, 0.2, 0.5, 1.0] {
            let f = ipe_encode(&Vec3::new(0.4, -0.2, 0.9), sigma, 8);
            let norms: Vec<f64> = (0..8).map(|l| f.level(l).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
            assert!(norms.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{sigma}: {norms:?}");
        }
        // and non-increasing in sigma at every level
        for l in 0..8 {
            assert!(attenuation(l, 0.3) <= attenuation(l, 0.2));
        }
    }
}

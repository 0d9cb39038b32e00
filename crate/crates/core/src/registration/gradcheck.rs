//! Finite-difference validation of analytic gradients.

/// Largest deviation between `analytic` and central differences of `f`,
/// relative to the largest finite-difference component. Each coordinate is
/// perturbed by `1e-4 · max(|p_i|, 1)`.
pub fn gradient_check(f: impl Fn(&[f64]) -> f64, params: &[f64], analytic: &[f64]) -> f64 {
    assert_eq!(params.len(), analytic.len());
    let mut p = params.to_vec();
    let fd: Vec<f64> = (0..params.len())
        .map(|i| {
            let h = 1e-4 * params[i].abs().max(1.0);
            p[i] = params[i] + h;
            let up = f(&p);
            p[i] = params[i] - h;
            let down = f(&p);
            p[i] = params[i];
            (up - down) / (2.0 * h)
        })
        .collect();
    let scale = fd.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let worst = fd.iter().zip(analytic).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        worst
    } else {
        worst / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_of_a_quadratic() {
        let f = |p: &[f64]| p[0] * p[0] + 3.0 * p[0] * p[1] - p[1];
        let p = [0.4, -1.3];
        let g = [2.0 * p[0] + 3.0 * p[1], 3.0 * p[0] - 1.0];
        assert!(gradient_check(f, &p, &g) < 1e-9);
        assert!(gradient_check(f, &p, &[g[0], g[1] + 0.5]) > 0.1);
    }
}

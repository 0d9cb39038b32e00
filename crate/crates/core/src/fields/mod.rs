//! Density scenes, volume rendering and surface-field extraction.

pub mod analytic;
pub mod grid;
pub mod render;
pub mod surface;

pub use analytic::Primitive;
pub use grid::{GridSpec, RgbGrid, ScalarGrid};
pub use render::{export_point_cloud, render, transmittance, Aabb, RenderConfig, Rendering};
pub use surface::{
    extract_surface_field, occupancy, surface_likelihood_along_ray, threshold, BinaryGrid, SurfaceConfig, SurfaceFieldGrid,
};

use crate::geometry::{PinholeCamera, Ray, Vec3};

/// Where a scene's density (and optional emission) comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DensitySource {
    Grid { density: ScalarGrid, rgb: Option<RgbGrid> },
    Analytic(Primitive),
}

/// A bounded density field with the cameras that observed it.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityScene {
    pub radius: f64,
    pub source: DensitySource,
    pub cameras: Vec<PinholeCamera>,
    pub background: [f64; 3],
}

impl DensityScene {
    pub fn analytic(radius: f64, primitive: Primitive, cameras: Vec<PinholeCamera>) -> Self {
        Self {
            radius,
            source: DensitySource::Analytic(primitive),
            cameras,
            background: [0.0; 3],
        }
    }

    pub fn from_grid(radius: f64, density: ScalarGrid, rgb: Option<RgbGrid>, cameras: Vec<PinholeCamera>) -> Self {
        Self {
            radius,
            source: DensitySource::Grid { density, rgb },
            cameras,
            background: [0.0; 3],
        }
    }

    /// Default quadrature step `r / 256`.
    pub fn default_step(&self) -> f64 {
        self.radius / 256.0
    }

    pub fn has_emission(&self) -> bool {
        match &self.source {
            DensitySource::Grid { rgb, .. } => rgb.is_some(),
            DensitySource::Analytic(p) => p.has_emission(),
        }
    }

    /// τ(x); zero outside the ball of radius `r`.
    pub fn density(&self, x: &Vec3) -> f64 {
        if x.norm_squared() > self.radius * self.radius {
            return 0.0;
        }
        match &self.source {
            DensitySource::Grid { density, .. } => density.sample(x),
            DensitySource::Analytic(p) => p.density(x),
        }
    }

    /// Density and emission color at `x` (black where no emission is defined).
    pub fn sample(&self, x: &Vec3) -> (f64, [f64; 3]) {
        if x.norm_squared() > self.radius * self.radius {
            return (0.0, [0.0; 3]);
        }
        match &self.source {
            DensitySource::Grid { density, rgb } => {
                (density.sample(x), rgb.as_ref().map(|g| g.sample(x)).unwrap_or([0.0; 3]))
            }
            DensitySource::Analytic(p) => {
                let s = p.sample(x);
                (s.density, s.emission.unwrap_or([0.0; 3]))
            }
        }
    }

    /// Sorted, merged ray-parameter intervals (t ≥ 0) outside of which the
    /// density along `ray` is zero.
    pub fn support(&self, ray: &Ray) -> Vec<(f64, f64)> {
        let Some(ball) = analytic::ray_sphere(ray, &Vec3::zeros(), self.radius) else {
            return Vec::new();
        };
        let raw = match &self.source {
            DensitySource::Grid { density, .. } => {
                let lo = Vec3::from(density.spec.origin);
                analytic::ray_aabb(ray, &lo, &density.spec.max_corner()).into_iter().collect()
            }
            DensitySource::Analytic(p) => p.ray_support(ray),
        };
        let mut clipped: Vec<(f64, f64)> = raw
            .into_iter()
            .map(|(a, b)| (a.max(ball.0).max(0.0), b.min(ball.1)))
            .filter(|(a, b)| a < b)
            .collect();
        clipped.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(clipped.len());
        for (a, b) in clipped {
            match merged.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        merged
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_vanishes_outside_ball() {
        let scene = DensityScene::analytic(
            0.5,
            Primitive::sphere(Vec3::zeros(), 2.0, 3.0),
            vec![],
        );
        assert_eq!(scene.density(&Vec3::new(0.4, 0.0, 0.0)), 3.0);
        assert_eq!(scene.density(&Vec3::new(0.6, 0.0, 0.0)), 0.0);
    }

    #[test]
    fn support_is_merged_and_clipped() {
        let scene = DensityScene::analytic(
            1.0,
            Primitive::union(vec![
                Primitive::sphere(Vec3::new(0.0, 0.0, 0.0), 0.2, 1.0),
                Primitive::sphere(Vec3::new(0.1, 0.0, 0.0), 0.2, 1.0),
                Primitive::sphere(Vec3::new(0.85, 0.0, 0.0), 0.4, 1.0),
            ]),
            vec![],
        );
        let ray = Ray::new(Vec3::new(-2.0, 0.0, 0.0), Vec3::x());
        let s = scene.support(&ray);
        assert_eq!(s.len(), 2);
        assert!((s[0].0 - 1.8).abs() < 1e-6 && (s[0].1 - 2.3).abs() < 1e-6);
        assert!((s[1].0 - 2.45).abs() < 1e-6 && (s[1].1 - 3.0).abs() < 1e-6);
    }
}

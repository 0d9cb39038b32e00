//! From a density scene to the per-σ fields registration consumes.

use serde::{Deserialize, Serialize};

use crate::distill::{gaussian_blur, SmoothedField};
use crate::error::Result;
use crate::fields::{
    extract_surface_field, occupancy, threshold, BinaryGrid, DensityScene, ScalarGrid, SurfaceConfig, SurfaceFieldGrid,
};
use crate::registration::{Ablations, Level, Pyramid};

/// Which quantity the matching residual compares.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    #[default]
    Surface,
    /// Density divided by its largest grid value.
    Density,
    /// Emission color, one channel per component.
    Radiance,
}

impl FieldKind {
    pub fn from_ablations(ab: &Ablations) -> Self {
        if ab.radiance_residual {
            FieldKind::Radiance
        } else if ab.density_residual {
            FieldKind::Density
        } else {
            FieldKind::Surface
        }
    }
}

/// The surface field of a scene and its thresholded indicator.
#[derive(Debug, Clone)]
pub struct SurfaceFields {
    pub surface: SurfaceFieldGrid,
    pub binary: BinaryGrid,
}

pub fn surface_fields(scene: &DensityScene, config: &SurfaceConfig) -> Result<SurfaceFields> {
    let surface = extract_surface_field(scene, config)?;
    let binary = threshold(&surface);
    Ok(SurfaceFields { surface, binary })
}

/// `S^ε` smoothed at each σ on the surface grid's nodes. σ = 0 keeps the
/// thresholded grid. Larger σ convolve the per-cell occupancy of `S > ε`,
/// which places the thresholded surface to a fraction of a voxel; `step` is
/// the transmittance quadrature step.
pub fn surface_levels(scene: &DensityScene, surface: &SurfaceFieldGrid, step: f64, sigmas: &[f64]) -> Result<Vec<SmoothedField>> {
    let binary = threshold(surface).to_scalar();
    let occupied = if sigmas.iter().any(|s| *s > 0.0) {
        Some(occupancy(scene, surface, step)?)
    } else {
        None
    };
    Ok(sigmas
        .iter()
        .map(|&sigma| {
            let grid = match &occupied {
                Some(occupied) if sigma > 0.0 => gaussian_blur(occupied, sigma),
                _ => binary.clone(),
            };
            SmoothedField::from_grid(sigma, grid)
        })
        .collect())
}

fn blurred_levels(channels: &[ScalarGrid], sigmas: &[f64]) -> Pyramid {
    Pyramid::new(
        sigmas
            .iter()
            .map(|&sigma| Level {
                sigma,
                channels: channels
                    .iter()
                    .map(|g| SmoothedField::from_grid(sigma, gaussian_blur(g, sigma)))
                    .collect(),
            })
            .collect(),
    )
}

/// Fields of `kind` at every σ, sampled on the surface grid's nodes.
pub fn build_pyramid(scene: &DensityScene, surface: &SurfaceFieldGrid, step: f64, sigmas: &[f64], kind: FieldKind) -> Result<Pyramid> {
    let spec = surface.grid.spec;
    Ok(match kind {
        FieldKind::Surface => Pyramid::from_fields(surface_levels(scene, surface, step, sigmas)?),
        FieldKind::Density => {
            let tau = ScalarGrid::from_fn(spec, |x| scene.density(&x) as f32);
            let scale = tau.min_max().1.max(f32::MIN_POSITIVE);
            let normalized = ScalarGrid {
                spec,
                values: tau.values.iter().map(|v| v / scale).collect(),
            };
            blurred_levels(&[normalized], sigmas)
        }
        FieldKind::Radiance => {
            let channels: Vec<ScalarGrid> = (0..3)
                .map(|c| ScalarGrid::from_fn(spec, |x| scene.sample(&x).1[c] as f32))
                .collect();
            blurred_levels(&channels, sigmas)
        }
    })
}

/// Surface extraction followed by [`build_pyramid`].
pub fn prepare(scene: &DensityScene, config: &SurfaceConfig, sigmas: &[f64], kind: FieldKind) -> Result<(SurfaceFields, Pyramid)> {
    let fields = surface_fields(scene, config)?;
    let step = config.step.unwrap_or_else(|| scene.default_step());
    let pyramid = build_pyramid(scene, &fields.surface, step, sigmas, kind)?;
    Ok((fields, pyramid))
}

//! Smoothed fields of one scene at every σ level the schedule may visit.

use crate::distill::SmoothedField;
use crate::geometry::Vec3;

use super::schedule::nearest_level;

/// One σ level. Surface fields have a single channel; the radiance ablation
/// uses three.
#[derive(Debug, Clone)]
pub struct Level {
    pub sigma: f64,
    pub channels: Vec<SmoothedField>,
}

impl Level {
    pub fn single(field: SmoothedField) -> Self {
        Self {
            sigma: field.sigma,
            channels: vec![field],
        }
    }

    /// Mean over channels, used by the sampler's surface predicate.
    pub fn intensity(&self, x: &Vec3) -> f64 {
        self.channels.iter().map(|c| c.query(x)).sum::<f64>() / self.channels.len() as f64
    }
}

#[derive(Debug, Clone, Default)]
pub struct Pyramid {
    pub levels: Vec<Level>,
}

impl Pyramid {
    pub fn new(mut levels: Vec<Level>) -> Self {
        levels.sort_by(|a, b| b.sigma.partial_cmp(&a.sigma).unwrap());
        Self { levels }
    }

    pub fn from_fields(fields: Vec<SmoothedField>) -> Self {
        Self::new(fields.into_iter().map(Level::single).collect())
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.sigma).collect()
    }

    pub fn nearest(&self, sigma: f64) -> usize {
        nearest_level(&self.sigmas(), sigma)
    }

    pub fn channels(&self) -> usize {
        self.levels.first().map_or(0, |l| l.channels.len())
    }
}

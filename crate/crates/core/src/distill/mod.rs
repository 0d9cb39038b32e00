//! Smoothed surface fields `S^σ` and their distillation.

pub mod ipe;
pub mod mlp;
pub mod smooth;

pub use ipe::{ipe_encode, IpeFeatures};
pub use mlp::{Mlp, MlpConfig};
pub use smooth::{distill_grid, gaussian_blur, smooth_mc, Backing, DistillMethod, SmoothedField};

use crate::error::{Error, Result};
use crate::fields::BinaryGrid;

/// Poisson loss `pred − target·ln(pred)`.
pub fn poisson_loss(pred: f64, target: f64) -> Result<f64> {
    if !(pred > 0.0) {
        return Err(Error::NonPositivePrediction(pred));
    }
    Ok(mlp::poisson(pred, target))
}

/// `d/dpred` of [`poisson_loss`].
pub fn poisson_loss_grad(pred: f64, target: f64) -> Result<f64> {
    if !(pred > 0.0) {
        return Err(Error::NonPositivePrediction(pred));
    }
    Ok(1.0 - target / pred)
}

/// Result of MLP distillation: the field and its per-step training loss.
#[derive(Debug, Clone)]
pub struct MlpDistillation {
    pub field: SmoothedField,
    pub loss_history: Vec<f64>,
}

/// Distills `S^σ` of `field` into an IPE-conditioned MLP. The regression
/// target is the grid-smoothed field, sampled at points drawn uniformly in the
/// ball of radius `radius`.
pub fn distill_mlp(field: &BinaryGrid, sigma: f64, radius: f64, config: &MlpConfig) -> Result<MlpDistillation> {
    let ones = field.count();
    if ones == 0 || ones == field.cells.len() {
        return Err(Error::DegenerateField);
    }
    let oracle = distill_grid(field, &[sigma], DistillMethod::Convolution).remove(0);
    let mut net = Mlp::new(config, sigma, radius);
    let loss_history = mlp::train(
        &mut net,
        config,
        |rng| mlp::uniform_in_ball(rng, radius),
        |x| oracle.query(x),
    );
    let gradient_step = oracle.gradient_step;
    Ok(MlpDistillation {
        field: SmoothedField {
            sigma,
            backing: Backing::Mlp(Box::new(net)),
            gradient_step,
        },
        loss_history,
    })
}

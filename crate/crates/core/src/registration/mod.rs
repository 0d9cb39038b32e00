//! The two-term registration objective and its optimizer.

pub mod gradcheck;
pub mod kernel;
pub mod loss;
pub mod optimize;
pub mod pyramid;
pub mod schedule;

pub use gradcheck::gradient_check;
pub use kernel::{robust_kernel, robust_kernel_eval, KernelEval, RobustKernelParams};
pub use loss::{
    keypoint_loss, level_residual, matching_loss, matching_loss_and_gradient, matching_loss_and_gradient_cached,
    registration_keypoint_loss, residual, source_values,
    total_loss, Gradient, KeypointSet,
};
pub use optimize::{
    register, register_best_of, Ablations, BestOf, Failure, Observer, Phase, Problem, Registration,
    RegistrationConfig, RestartOutcome, TraceRecord,
};
pub use pyramid::{Level, Pyramid};
pub use schedule::{geometric_levels, lambda, nearest_level, Schedule};

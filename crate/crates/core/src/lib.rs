//! Rigid registration of volumetric density fields.

pub mod distill;
pub mod error;
pub mod eval;
pub mod fields;
pub mod fixtures;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod registration;
pub mod sampler;

pub use error::{Error, Result};

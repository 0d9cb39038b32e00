//! Command-line tools and HTTP service around the `fieldreg` library.

pub mod commands;
pub mod service;
pub mod workflow;

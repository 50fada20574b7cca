//! Objective evaluation: ESTOI intelligibility and F0/VUV diagnostics.
//!
//! PESQ is not provided; ESTOI is the quality signal used everywhere,
//! including model selection during training.

mod estoi;
mod pitch;

pub use estoi::{estoi, EstoiConfig};
pub use pitch::{f0_rmse, F0Comparison};

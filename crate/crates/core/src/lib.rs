//! Label-noise calibration: training dynamics, candidate retrieval and a
//! simplex diffusion posterior over clean labels.

// Validation uses `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod candidates;
pub mod classifier;
pub mod coreg;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod math;
pub mod nn;
pub mod noise;
pub mod pipeline;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};

//! Simulation laboratory for preamble-collision detection in grant-based
//! random access.
//!
//! * [`ra_model`]: preamble pools, activity draws, channel and frame synthesis.
//! * [`mht`]: the Hadamard and modified Hadamard transforms.
//! * [`bmht`]: the trainable block transform-domain denoiser.
//! * [`detectors`]: likelihood, score and SVGD-family detectors.
//! * [`metrics`]: RMS/PRD and the detection metrics.
//! * [`harness`]: configuration, experiment sweeps and file output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bmht;
pub mod detectors;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod mht;
pub mod ra_model;
pub mod rng;

pub use error::{Error, Result};

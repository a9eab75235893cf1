//! Activity detectors: likelihood and score, SVGD-family particle methods,
//! a Metropolis baseline and the rounded-mean estimator.

pub mod estimate;
pub mod exhaustive;
pub mod kernel;
pub mod likelihood;
pub mod mcmc;
pub mod svgd;

pub use estimate::{estimate_counts, round_counts};
pub use exhaustive::exhaustive_mle;
pub use kernel::{detector_bandwidth, median_bandwidth, svgd_velocity, ParticleSet};
pub use likelihood::{
    blind_log_likelihood, factor_with_jitter, log_likelihood, score, score_blind, FrameStats,
    Likelihood, DEFAULT_FLOOR,
};
pub use mcmc::{run_mcmc, McmcConfig};
pub use svgd::{
    run_blind_nsvgd, run_nsvgd, run_particles, run_svgd, DetectionResult, DetectorConfig,
    OptimizerState, UpdateRule,
};

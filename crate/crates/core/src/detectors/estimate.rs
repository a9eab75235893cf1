//! Rounded-mean count estimator.

use super::kernel::ParticleSet;

/// Round `x̄_k` half away from zero and clamp at 0.
pub fn round_counts(mean: &[f64]) -> Vec<u32> {
    mean.iter().map(|&v| v.round().max(0.0) as u32).collect()
}

/// Round the particle mean to a count vector.
pub fn estimate_counts(particles: &ParticleSet) -> Vec<u32> {
    round_counts(&particles.mean())
}

//! Random-walk Metropolis baseline on integer count vectors.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::estimate::round_counts;
use super::kernel::ParticleSet;
use super::likelihood::{FrameStats, Likelihood};
use super::svgd::DetectionResult;
use crate::error::{Error, Result};
use crate::ra_model::{PreamblePool, ReceivedFrame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub steps: usize,
    pub burn_in: usize,
    /// Largest count any coordinate may take.
    pub x_max: u32,
    /// Value every coordinate starts from.
    pub start: u32,
    pub beta: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            burn_in: 1000,
            x_max: 20,
            start: 1,
            beta: 1.0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps <= self.burn_in {
            return Err(Error::Config(format!(
                "mcmc.steps ({}) must exceed mcmc.burn_in ({})",
                self.steps, self.burn_in
            )));
        }
        if self.start > self.x_max {
            return Err(Error::Config(format!(
                "mcmc.start ({}) exceeds mcmc.x_max ({})",
                self.start, self.x_max
            )));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!(
                "mcmc.beta must be > 0, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Propose `x_k ± 1` for a uniformly chosen `k`; a step outside `{0..x_max}` stays put.
pub fn propose<R: Rng + ?Sized>(x: &[u32], x_max: u32, rng: &mut R) -> (usize, u32) {
    let k = rng.random_range(0..x.len());
    let up = rng.random_bool(0.5);
    let v = x[k];
    let next = match (up, v) {
        (true, v) if v >= x_max => v,
        (true, v) => v + 1,
        (false, 0) => 0,
        (false, v) => v - 1,
    };
    (k, next)
}

/// Metropolis acceptance probability `min(1, exp(ℓ' − ℓ))`.
pub fn acceptance(current_ll: f64, proposed_ll: f64) -> f64 {
    (proposed_ll - current_ll).exp().min(1.0)
}

fn as_real(x: &[u32]) -> Vec<f64> {
    x.iter().map(|&v| f64::from(v)).collect()
}

/// Metropolis chain over `{0..x_max}^K` targeting the noise-aware likelihood.
pub fn run_mcmc<R: Rng + ?Sized>(
    frame: &ReceivedFrame,
    pool: &PreamblePool,
    cfg: &McmcConfig,
    noise_power: f64,
    rng: &mut R,
) -> Result<DetectionResult> {
    cfg.validate()?;
    if !(noise_power > 0.0) {
        return Err(Error::Config(format!(
            "the Metropolis baseline needs a positive noise power, got {noise_power}"
        )));
    }
    let start = Instant::now();
    let lk = Likelihood::aware(pool, cfg.beta, noise_power)?;
    let stats = FrameStats::new(frame)?;
    let k = pool.count();
    let mut x = vec![cfg.start; k];
    let mut ll = lk.value(&as_real(&x), &stats)?;
    let mut sums = vec![0.0; k];
    for step in 0..cfg.steps {
        let (idx, v) = propose(&x, cfg.x_max, rng);
        let u: f64 = rng.random();
        if v != x[idx] {
            let old = x[idx];
            x[idx] = v;
            let cand = lk
                .value(&as_real(&x), &stats)
                .map_err(|e| e.at_iteration(step))?;
            if u < acceptance(ll, cand) {
                ll = cand;
            } else {
                x[idx] = old;
            }
        }
        if step >= cfg.burn_in {
            for (s, &v) in sums.iter_mut().zip(&x) {
                *s += f64::from(v);
            }
        }
    }
    let kept = (cfg.steps - cfg.burn_in) as f64;
    let particle_mean: Vec<f64> = sums.iter().map(|s| s / kept).collect();
    Ok(DetectionResult {
        estimate: round_counts(&particle_mean),
        particles: ParticleSet::from_flat(1, k, as_real(&x))?,
        particle_mean,
        iterations_run: cfg.steps,
        wall_time: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn boundary_proposals_stay() {
        let mut rng = seeded(1);
        for _ in 0..200 {
            let (k, v) = propose(&[0], 3, &mut rng);
            assert_eq!(k, 0);
            assert!(v <= 1);
            let (_, v) = propose(&[3], 3, &mut rng);
            assert!(v == 3 || v == 2);
        }
    }

    #[test]
    fn equal_likelihood_always_accepted() {
        assert_eq!(acceptance(-12.5, -12.5), 1.0);
        assert_eq!(acceptance(-12.5, -3.0), 1.0);
        assert!((acceptance(0.0, -1.0) - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn config_checks() {
        let bad = McmcConfig {
            steps: 10,
            burn_in: 10,
            ..McmcConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(McmcConfig {
            start: 30,
            ..McmcConfig::default()
        }
        .validate()
        .is_err());
    }
}

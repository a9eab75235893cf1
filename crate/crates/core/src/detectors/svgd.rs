//! SVGD, NSVGD and blind NSVGD activity detectors.

use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::estimate::round_counts;
use super::kernel::{detector_bandwidth, svgd_velocity, ParticleSet};
use super::likelihood::{FrameStats, Likelihood};
use crate::error::{Error, Result};
use crate::ra_model::{PreamblePool, ReceivedFrame};

/// Step sizes, optimizer constants and particle settings shared by all particle detectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// `λ`.
    pub step_size: f64,
    /// `N`.
    pub iterations: usize,
    /// `α`.
    pub momentum: f64,
    /// `ϱ`.
    pub accumulation_decay: f64,
    /// `γ`.
    pub weight_decay: f64,
    /// `ε` in the normalization denominator.
    pub stability: f64,
    /// `ν`, NSVGD only.
    pub bias_weight: f64,
    /// `β`.
    pub beta: f64,
    /// `x_min`; particles are kept at or above it.
    pub floor: f64,
    /// Project the particles of the noise-aware detectors onto `x ≥ floor` as well.
    /// When off they may go negative for as long as the covariance stays positive definite.
    pub floor_non_blind: bool,
    /// `h_min`.
    pub h_min: f64,
    /// `n`.
    pub particles: usize,
    pub init_low: f64,
    pub init_high: f64,
    /// Optional upper clamp on the estimates of the non-blind detectors.
    pub clamp_upper: Option<u32>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            iterations: 1000,
            momentum: 0.9,
            accumulation_decay: 0.9,
            weight_decay: 0.1,
            stability: 1.0,
            bias_weight: 0.1,
            beta: 1.0,
            floor: 1e-3,
            floor_non_blind: true,
            h_min: 1e-6,
            particles: 6,
            init_low: 1.0,
            init_high: 1.1,
            clamp_upper: None,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("detector.{field}: {why}")));
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return bad("step_size", format!("must be > 0, got {}", self.step_size));
        }
        if self.iterations == 0 {
            return bad("iterations", "must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(
                "momentum",
                format!("must lie in [0, 1), got {}", self.momentum),
            );
        }
        if !(0.0..1.0).contains(&self.accumulation_decay) {
            return bad(
                "accumulation_decay",
                format!("must lie in [0, 1), got {}", self.accumulation_decay),
            );
        }
        if !(self.stability > 0.0) {
            return bad("stability", format!("must be > 0, got {}", self.stability));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(
                "weight_decay",
                format!("must be >= 0, got {}", self.weight_decay),
            );
        }
        if !self.bias_weight.is_finite() {
            return bad("bias_weight", "must be finite".into());
        }
        if !(self.beta > 0.0) {
            return bad("beta", format!("must be > 0, got {}", self.beta));
        }
        if !(self.floor > 0.0) {
            return bad("floor", format!("must be > 0, got {}", self.floor));
        }
        if !(self.h_min > 0.0) {
            return bad("h_min", format!("must be > 0, got {}", self.h_min));
        }
        if self.particles == 0 {
            return bad("particles", "must be >= 1".into());
        }
        if !(self.init_low < self.init_high) {
            return bad(
                "init_low",
                format!("[{}, {}) is empty", self.init_low, self.init_high),
            );
        }
        Ok(())
    }
}

/// Per-particle second-moment accumulator and momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub accumulated: Vec<f64>,
    pub momentum: Vec<f64>,
    started: bool,
}

impl OptimizerState {
    pub fn new(n: usize, k: usize) -> Self {
        Self {
            accumulated: vec![0.0; n * k],
            momentum: vec![0.0; n * k],
            started: false,
        }
    }

    /// Turn a raw velocity into the applied update direction:
    /// normalize by the accumulated magnitude, subtract weight decay, then
    /// smooth with momentum.
    pub fn transform(&mut self, omega: &mut [f64], x: &[f64], cfg: &DetectorConfig) {
        let first = !self.started;
        self.started = true;
        for i in 0..omega.len() {
            let w = omega[i];
            let q = if first {
                w * w
            } else {
                cfg.accumulation_decay * self.accumulated[i]
                    + (1.0 - cfg.accumulation_decay) * w * w
            };
            self.accumulated[i] = q;
            let mut w = w / (cfg.stability + q.sqrt());
            w -= cfg.weight_decay * x[i];
            let b = if first {
                w
            } else {
                cfg.momentum * self.momentum[i] + (1.0 - cfg.momentum) * w
            };
            self.momentum[i] = b;
            omega[i] = b;
        }
    }
}

/// Output of one detector run.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    /// `x̃`.
    pub estimate: Vec<u32>,
    /// `x̄`.
    pub particle_mean: Vec<f64>,
    pub iterations_run: usize,
    pub wall_time: Duration,
    pub particles: ParticleSet,
}

/// How the velocity field is turned into a particle update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateRule {
    /// `x ← x + λω`.
    Plain,
    /// Normalization, weight decay and momentum.
    Normalized,
    /// As `Normalized`, after adding `ν(nM − Σ‖x_u‖₁)/n` to every velocity entry.
    Biased { devices: usize },
}

/// Run `cfg.iterations` particle updates against an arbitrary likelihood.
///
/// Particles are projected onto the likelihood's floor when it has one.
pub fn run_particles<R: Rng + ?Sized>(
    likelihood: &Likelihood<'_>,
    stats: &FrameStats,
    cfg: &DetectorConfig,
    rule: UpdateRule,
    rng: &mut R,
) -> Result<DetectionResult> {
    cfg.validate()?;
    let start = Instant::now();
    let k = likelihood.pool().count();
    let n = cfg.particles;
    let mut particles = ParticleSet::uniform(n, k, cfg.init_low, cfg.init_high, rng)?;
    let mut opt = OptimizerState::new(n, k);
    let mut scores = vec![0.0; n * k];
    for r in 0..cfg.iterations {
        for i in 0..n {
            let s = likelihood
                .score(particles.particle(i), stats)
                .map_err(|e| e.at_iteration(r))?;
            scores[i * k..(i + 1) * k].copy_from_slice(&s);
        }
        let h = detector_bandwidth(&particles, cfg.h_min);
        let mut omega = svgd_velocity(&particles, &scores, h)?;
        if let UpdateRule::Biased { devices } = rule {
            let mass: f64 = particles.as_flat().iter().map(|v| v.abs()).sum();
            let theta = cfg.bias_weight * ((n * devices) as f64 - mass);
            let shift = theta / n as f64;
            omega.iter_mut().for_each(|w| *w += shift);
        }
        if rule != UpdateRule::Plain {
            opt.transform(&mut omega, particles.as_flat(), cfg);
        }
        let floor = likelihood.floor().unwrap_or(f64::NEG_INFINITY);
        for (x, w) in particles.as_flat_mut().iter_mut().zip(&omega) {
            *x = (*x + cfg.step_size * w).max(floor);
        }
        particles.iteration += 1;
        if !particles.is_finite() {
            return Err(Error::numerical("particles became non-finite").at_iteration(r));
        }
    }
    let particle_mean = particles.mean();
    Ok(DetectionResult {
        estimate: round_counts(&particle_mean),
        particle_mean,
        iterations_run: cfg.iterations,
        wall_time: start.elapsed(),
        particles,
    })
}

fn clamp_estimate(mut res: DetectionResult, cfg: &DetectorConfig) -> DetectionResult {
    if let Some(cap) = cfg.clamp_upper {
        res.estimate.iter_mut().for_each(|v| *v = (*v).min(cap));
    }
    res
}

fn aware_likelihood<'a>(
    pool: &'a PreamblePool,
    frame: &ReceivedFrame,
    cfg: &DetectorConfig,
) -> Result<Likelihood<'a>> {
    if cfg.floor_non_blind {
        Likelihood::aware_floored(pool, cfg.beta, frame.noise_power, cfg.floor)
    } else {
        Likelihood::aware(pool, cfg.beta, frame.noise_power)
    }
}

/// Plain SVGD on the noise-aware likelihood.
pub fn run_svgd<R: Rng + ?Sized>(
    frame: &ReceivedFrame,
    pool: &PreamblePool,
    cfg: &DetectorConfig,
    rng: &mut R,
) -> Result<DetectionResult> {
    let lk = aware_likelihood(pool, frame, cfg)?;
    let res = run_particles(&lk, &FrameStats::new(frame)?, cfg, UpdateRule::Plain, rng)?;
    Ok(clamp_estimate(res, cfg))
}

/// NSVGD: the normalized pipeline plus a bias toward the known device count.
pub fn run_nsvgd<R: Rng + ?Sized>(
    frame: &ReceivedFrame,
    pool: &PreamblePool,
    cfg: &DetectorConfig,
    m_known: usize,
    rng: &mut R,
) -> Result<DetectionResult> {
    let lk = aware_likelihood(pool, frame, cfg)?;
    let rule = UpdateRule::Biased { devices: m_known };
    let res = run_particles(&lk, &FrameStats::new(frame)?, cfg, rule, rng)?;
    Ok(clamp_estimate(res, cfg))
}

/// Blind NSVGD: uses neither the noise power nor the device count.
///
/// `frame` is normally the output of the denoiser; its `noise_power` field is ignored.
pub fn run_blind_nsvgd<R: Rng + ?Sized>(
    frame: &ReceivedFrame,
    pool: &PreamblePool,
    cfg: &DetectorConfig,
    rng: &mut R,
) -> Result<DetectionResult> {
    let lk = Likelihood::blind(pool, cfg.beta, cfg.floor)?;
    run_particles(
        &lk,
        &FrameStats::new(frame)?,
        cfg,
        UpdateRule::Normalized,
        rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ra_model::{
        draw_activity, generate_preamble_pool, snr_to_noise_power, synthesize_frame,
    };
    use crate::rng::seeded;

    fn instance(seed: u64) -> (PreamblePool, ReceivedFrame) {
        let mut rng = seeded(seed);
        let pool = generate_preamble_pool(8, 5, &mut rng).unwrap();
        let act = draw_activity(6, 8, &mut rng).unwrap();
        let frame = synthesize_frame(
            &pool,
            &act,
            1.0,
            10,
            snr_to_noise_power(16.0, 1.0),
            &mut rng,
        )
        .unwrap();
        (pool, frame)
    }

    fn short() -> DetectorConfig {
        DetectorConfig {
            iterations: 60,
            particles: 4,
            ..DetectorConfig::default()
        }
    }

    #[test]
    fn config_validation_names_field() {
        let cfg = DetectorConfig {
            step_size: 0.0,
            ..DetectorConfig::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("step_size"), "{msg}");
        assert!(DetectorConfig {
            iterations: 0,
            ..short()
        }
        .validate()
        .is_err());
        assert!(DetectorConfig {
            momentum: 1.0,
            ..short()
        }
        .validate()
        .is_err());
        assert!(DetectorConfig {
            stability: 0.0,
            ..short()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn runs_are_deterministic() {
        let (pool, frame) = instance(1);
        let a = run_blind_nsvgd(&frame, &pool, &short(), &mut seeded(9)).unwrap();
        let b = run_blind_nsvgd(&frame, &pool, &short(), &mut seeded(9)).unwrap();
        assert_eq!(a.particles, b.particles);
        assert_eq!(a.estimate, b.estimate);
        // an unfloored run may leave the domain; the error must repeat too
        let a = run_svgd(&frame, &pool, &short(), &mut seeded(9)).unwrap();
        let b = run_svgd(&frame, &pool, &short(), &mut seeded(9)).unwrap();
        assert_eq!(a.particles, b.particles);
        let free = DetectorConfig {
            floor_non_blind: false,
            ..short()
        };
        let a = run_svgd(&frame, &pool, &free, &mut seeded(9)).map(|r| r.particles);
        let b = run_svgd(&frame, &pool, &free, &mut seeded(9)).map(|r| r.particles);
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        let a = run_nsvgd(&frame, &pool, &short(), 6, &mut seeded(9)).unwrap();
        let b = run_nsvgd(&frame, &pool, &short(), 6, &mut seeded(9)).unwrap();
        assert_eq!(a.particles, b.particles);
    }

    #[test]
    fn estimate_is_rounded_mean() {
        let (pool, frame) = instance(2);
        let r = run_blind_nsvgd(&frame, &pool, &short(), &mut seeded(3)).unwrap();
        assert_eq!(r.estimate, round_counts(&r.particle_mean));
        assert_eq!(r.iterations_run, 60);
        assert_eq!(r.particles.iteration, 60);
    }

    #[test]
    fn optimizer_first_step_and_zero_decay() {
        let cfg = DetectorConfig {
            weight_decay: 0.0,
            ..DetectorConfig::default()
        };
        let mut st = OptimizerState::new(1, 2);
        let mut w = vec![3.0, -1.0];
        st.transform(&mut w, &[1.0, 1.0], &cfg);
        assert_eq!(w, vec![3.0 / 4.0, -1.0 / 2.0]);
        assert_eq!(st.accumulated, vec![9.0, 1.0]);
        let mut w2 = vec![0.0, 0.0];
        st.transform(&mut w2, &[1.0, 1.0], &cfg);
        // q = 0.9 q, normalized ω = 0, b = 0.9 b
        assert!((w2[0] - 0.9 * 0.75).abs() < 1e-15);
        assert!((st.accumulated[1] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn bias_vanishes_at_target_mass() {
        let (pool, frame) = instance(3);
        let lk = Likelihood::aware_floored(&pool, 1.0, frame.noise_power, 1e-3).unwrap();
        let stats = FrameStats::new(&frame).unwrap();
        let zero_bias = DetectorConfig {
            bias_weight: 0.0,
            ..short()
        };
        let a = run_particles(
            &lk,
            &stats,
            &zero_bias,
            UpdateRule::Biased { devices: 6 },
            &mut seeded(4),
        )
        .unwrap();
        let b = run_particles(
            &lk,
            &stats,
            &zero_bias,
            UpdateRule::Normalized,
            &mut seeded(4),
        )
        .unwrap();
        assert_eq!(a.particles, b.particles);
    }

    #[test]
    fn large_stability_reduces_to_scaled_plain_svgd() {
        let (pool, frame) = instance(5);
        let lk = Likelihood::blind(&pool, 1.0, 1e-3).unwrap();
        let stats = FrameStats::new(&frame).unwrap();
        let eps = 1e9;
        let plain_cfg = DetectorConfig {
            iterations: 5,
            step_size: 1e-4,
            ..short()
        };
        let norm_cfg = DetectorConfig {
            momentum: 0.0,
            accumulation_decay: 0.0,
            weight_decay: 0.0,
            stability: eps,
            step_size: 1e-4 * eps,
            ..plain_cfg.clone()
        };
        let a = run_particles(&lk, &stats, &plain_cfg, UpdateRule::Plain, &mut seeded(6)).unwrap();
        let b = run_particles(
            &lk,
            &stats,
            &norm_cfg,
            UpdateRule::Normalized,
            &mut seeded(6),
        )
        .unwrap();
        for (x, y) in a.particles.as_flat().iter().zip(b.particles.as_flat()) {
            assert!((x - y).abs() < 1e-5 * x.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn upper_clamp_applies_to_non_blind_only() {
        let (pool, frame) = instance(7);
        let cfg = DetectorConfig {
            clamp_upper: Some(0),
            ..short()
        };
        let r = run_svgd(&frame, &pool, &cfg, &mut seeded(1)).unwrap();
        assert!(r.estimate.iter().all(|&v| v == 0));
    }
}

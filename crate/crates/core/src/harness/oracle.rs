//! Independent numerical checks of the core algebra and detectors.

use rand::Rng;
use serde::Serialize;

use crate::bmht::{BmhtLayer, BmhtParams, LayerSpec, S};
use crate::detectors::{exhaustive_mle, run_blind_nsvgd, DetectorConfig, FrameStats, Likelihood};
use crate::error::Result;
use crate::linalg::CMatrix;
use crate::mht::{
    haar_packet_analysis, hadamard_matrix, imht_matrix_8, mht_forward, mht_inverse, mht_matrix_8,
};
use crate::ra_model::{
    draw_activity, generate_preamble_pool, model_covariance, snr_to_noise_power, synthesize_frame,
    ActivityVector,
};
use crate::rng::{derive_seed, seeded};

/// Result of one check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleOutcome {
    pub name: String,
    pub passed: bool,
    /// The measured quantity (an error or a rate, see `detail`).
    pub observed: f64,
    pub threshold: f64,
    pub detail: String,
}

fn below(name: &str, observed: f64, threshold: f64, detail: String) -> OracleOutcome {
    OracleOutcome {
        name: name.into(),
        passed: observed < threshold,
        observed,
        threshold,
        detail,
    }
}

fn at_least(name: &str, observed: f64, threshold: f64, detail: String) -> OracleOutcome {
    OracleOutcome {
        name: name.into(),
        passed: observed >= threshold,
        observed,
        threshold,
        detail,
    }
}

/// `max |Q₈⁻¹Q₈ − I|`.
pub fn transform_identity() -> OracleOutcome {
    let prod = imht_matrix_8().matmul(&mht_matrix_8());
    let mut worst: f64 = 0.0;
    for i in 0..8 {
        for j in 0..8 {
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((prod[i * 8 + j] - want).abs());
        }
    }
    below(
        "inverse-mht-identity",
        worst,
        1e-12,
        "max |Q8^-1 Q8 - I|".into(),
    )
}

/// The two-level Haar packet filter bank applied to unit impulses reproduces
/// the rows of `H₄`, scaled by 1/2, in subband order `(ll, lh, hl, hh)`.
pub fn filter_bank_equivalence() -> Result<OracleOutcome> {
    let h4 = hadamard_matrix(4)?;
    // ll, lh, hl, hh correspond to Sylvester rows 0, 2, 1, 3
    let order = [0usize, 2, 1, 3];
    let mut worst: f64 = 0.0;
    for j in 0..4 {
        let mut e = [0.0; 4];
        e[j] = 1.0;
        let out = haar_packet_analysis(&e, 2)?;
        for (band, &row) in order.iter().enumerate() {
            worst = worst.max((2.0 * out[band] - h4.entry(row, j)).abs());
        }
    }
    Ok(below(
        "filter-bank-equivalence",
        worst,
        1e-12,
        "max |2 * analysis(e_j) - H4 column j| over subbands ll, lh, hl, hh".into(),
    ))
}

/// Round-trip error of `Q₈⁻¹ Q₈ b` on random blocks.
pub fn mht_round_trip(blocks: usize, seed: u64) -> Result<OracleOutcome> {
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..blocks {
        let b: Vec<f64> = (0..8).map(|_| rng.random_range(-10.0..10.0)).collect();
        let back = mht_inverse(&mht_forward(&b)?)?;
        for (x, y) in b.iter().zip(&back) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(below(
        "mht-round-trip",
        worst,
        1e-10,
        format!("max abs error over {blocks} blocks"),
    ))
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

/// Blind score against central differences of the blind log-likelihood
/// (K = 6, L = 4, T = 3, x uniform on [0.5, 3]).
pub fn score_finite_difference(instances: usize, seed: u64) -> Result<OracleOutcome> {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = seeded(derive_seed(seed, &[i as u64]));
        let pool = generate_preamble_pool(6, 4, &mut rng)?;
        let act = draw_activity(rng.random_range(1..=6), 6, &mut rng)?;
        let frame = synthesize_frame(&pool, &act, 1.0, 3, 0.1, &mut rng)?;
        let stats = FrameStats::new(&frame)?;
        let lk = Likelihood::blind(&pool, 1.0, 1e-3)?;
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(0.5..3.0)).collect();
        let g = lk.score(&x, &stats)?;
        let mut fd = vec![0.0; 6];
        for k in 0..6 {
            let h = 1e-5 * x[k];
            let mut p = x.clone();
            let mut m = x.clone();
            p[k] += h;
            m[k] -= h;
            fd[k] = (lk.value(&p, &stats)? - lk.value(&m, &stats)?) / (2.0 * h);
        }
        worst = worst.max(rel_err(&fd, &g));
    }
    Ok(below(
        "score-finite-difference",
        worst,
        1e-4,
        format!("max relative error over {instances} instances"),
    ))
}

/// Analytic BMHT gradients against central differences at points away from
/// the threshold kinks.
pub fn bmht_gradient_finite_difference(points: usize, seed: u64) -> Result<OracleOutcome> {
    let (kappa, rho) = (1e-3, 0.5);
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < points {
        let mut params = BmhtParams::identity();
        for j in 0..S {
            params.u[j] = rng.random_range(0.5..1.5);
            params.thresholds[j] = rng.random_range(0.05..0.5);
        }
        let noisy: [f64; S] = std::array::from_fn(|_| rng.random_range(-1.5..1.5));
        let clean: [f64; S] = std::array::from_fn(|_| rng.random_range(-1.5..1.5));
        let layer = BmhtLayer::new(params, LayerSpec::FULL);
        let tr = layer.trace(&noisy);
        let smooth = (0..S).all(|j| (tr.scaled[j].abs() - params.thresholds[j]).abs() > 1e-3);
        if !smooth {
            continue;
        }
        let g = layer.gradients(&noisy, &clean, kappa, rho)?;
        let analytic: Vec<f64> = g.u.iter().chain(&g.thresholds).copied().collect();
        let mut fd = Vec::with_capacity(2 * S);
        let h = 1e-6;
        for idx in 0..2 * S {
            let eval = |delta: f64| -> Result<f64> {
                let mut p = params;
                if idx < S {
                    p.u[idx] += delta;
                } else {
                    p.thresholds[idx - S] += delta;
                }
                BmhtLayer::new(p, LayerSpec::FULL).loss(&noisy, &clean, kappa, rho)
            };
            fd.push((eval(h)? - eval(-h)?) / (2.0 * h));
        }
        worst = worst.max(rel_err(&fd, &analytic));
        done += 1;
    }
    Ok(below(
        "bmht-gradient-finite-difference",
        worst,
        1e-5,
        format!("max relative error over {points} smooth points"),
    ))
}

/// Empirical covariance of synthesized `y_t` against `β² Z C_x Zᴴ + δ I`
/// (K = 6, L = 4, one antenna per frame).
pub fn covariance_law(frames: usize, seed: u64) -> Result<OracleOutcome> {
    let mut rng = seeded(seed);
    let pool = generate_preamble_pool(6, 4, &mut rng)?;
    let act = ActivityVector::from_assignments(6, vec![0, 0, 1, 3, 3, 3, 5])?;
    let (beta, delta) = (1.0, 0.3);
    let mut emp = CMatrix::zeros(4, 4);
    for _ in 0..frames {
        let f = synthesize_frame(&pool, &act, beta, 1, delta, &mut rng)?;
        let y = f.y.col(0);
        for j in 0..4 {
            for i in 0..4 {
                emp[(i, j)] += y[i] * y[j].conj();
            }
        }
    }
    let scale = 1.0 / frames as f64;
    let emp = CMatrix::from_fn(4, 4, |i, j| emp[(i, j)] * scale);
    let x: Vec<f64> = act.counts.iter().map(|&c| f64::from(c)).collect();
    let phi = model_covariance(&pool, &x, beta, delta);
    let err = emp.sub(&phi)?.frobenius_norm() / phi.frobenius_norm();
    Ok(below(
        "covariance-law",
        err,
        0.05,
        format!("relative Frobenius error over {frames} frames"),
    ))
}

/// Blind NSVGD against brute-force search of the blind likelihood on tiny instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MleAgreement {
    pub seeds: usize,
    /// Fraction of seeds whose estimate equals the exhaustive arg-max.
    pub match_rate: f64,
    /// Fraction of seeds whose blind log-likelihood is within 5% of the maximum.
    pub within_rate: f64,
}

/// K = 4, L = 3, M = 3, T = 8, SNR 16 dB; the search covers `{0..M}^K`.
pub fn exhaustive_mle_agreement(
    seeds: usize,
    seed: u64,
    layer: Option<&BmhtLayer>,
    cfg: &DetectorConfig,
) -> Result<MleAgreement> {
    let (k, l, m, t) = (4, 3, 3usize, 8);
    let delta = snr_to_noise_power(16.0, cfg.beta);
    let mut matches = 0;
    let mut within = 0;
    for s in 0..seeds {
        let mut rng = seeded(derive_seed(seed, &[s as u64]));
        let pool = generate_preamble_pool(k, l, &mut rng)?;
        let act = draw_activity(m, k, &mut rng)?;
        let raw = synthesize_frame(&pool, &act, cfg.beta, t, delta, &mut rng)?;
        let frame = match layer {
            Some(layer) => layer.denoise_frame(&raw)?,
            None => raw,
        };
        let res = run_blind_nsvgd(&frame, &pool, cfg, &mut rng)?;
        let lk = Likelihood::blind(&pool, cfg.beta, cfg.floor)?;
        let stats = FrameStats::new(&frame)?;
        let (best_x, best) = exhaustive_mle(&lk, &stats, m as u32)?;
        let est: Vec<f64> = res.estimate.iter().map(|&v| f64::from(v)).collect();
        let value = lk.value(&est, &stats)?;
        if res.estimate == best_x {
            matches += 1;
        }
        if (value - best).abs() <= 0.05 * best.abs() {
            within += 1;
        }
    }
    Ok(MleAgreement {
        seeds,
        match_rate: matches as f64 / seeds as f64,
        within_rate: within as f64 / seeds as f64,
    })
}

/// Every check, in a fixed order.
pub fn run_all(
    fd_instances: usize,
    covariance_frames: usize,
    mle_seeds: usize,
    seed: u64,
    layer: Option<&BmhtLayer>,
    cfg: &DetectorConfig,
) -> Result<Vec<OracleOutcome>> {
    let mut out = vec![
        transform_identity(),
        filter_bank_equivalence()?,
        mht_round_trip(10_000, derive_seed(seed, &[1]))?,
        score_finite_difference(fd_instances, derive_seed(seed, &[2]))?,
        bmht_gradient_finite_difference(100, derive_seed(seed, &[3]))?,
        covariance_law(covariance_frames, derive_seed(seed, &[4]))?,
    ];
    let agree = exhaustive_mle_agreement(mle_seeds, derive_seed(seed, &[5]), layer, cfg)?;
    out.push(at_least(
        "exhaustive-mle-match",
        agree.match_rate,
        0.6,
        format!(
            "fraction of {} seeds matching the exhaustive arg-max",
            agree.seeds
        ),
    ));
    out.push(at_least(
        "exhaustive-mle-within-5pct",
        agree.within_rate,
        0.9,
        format!(
            "fraction of {} seeds within 5% of the exhaustive maximum",
            agree.seeds
        ),
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cheap_oracles_pass() {
        assert!(transform_identity().passed);
        assert!(filter_bank_equivalence().unwrap().passed);
        assert!(mht_round_trip(500, 1).unwrap().passed);
        assert!(score_finite_difference(5, 2).unwrap().passed);
        assert!(bmht_gradient_finite_difference(10, 3).unwrap().passed);
    }
}

//! Denoising and detection quality measures.

use serde::Serialize;

use crate::error::{Error, Result};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("length mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::Shape("signals must be nonempty".into()));
    }
    Ok(())
}

fn sq_err(clean: &[f64], denoised: &[f64]) -> f64 {
    clean
        .iter()
        .zip(denoised)
        .map(|(c, d)| (c - d) * (c - d))
        .sum()
}

/// Root-mean-square error, in percent.
pub fn rms(clean: &[f64], denoised: &[f64]) -> Result<f64> {
    check_lengths(clean.len(), denoised.len())?;
    Ok(100.0 * (sq_err(clean, denoised) / clean.len() as f64).sqrt())
}

/// Percentage root-mean-square difference `‖c − d‖ / ‖c‖`, in percent.
pub fn prd(clean: &[f64], denoised: &[f64]) -> Result<f64> {
    check_lengths(clean.len(), denoised.len())?;
    let energy: f64 = clean.iter().map(|c| c * c).sum();
    if energy == 0.0 {
        return Err(Error::Domain(
            "PRD is undefined for an all-zero clean signal".into(),
        ));
    }
    Ok(100.0 * (sq_err(clean, denoised) / energy).sqrt())
}

fn check_counts(truth: &[u32], estimate: &[u32]) -> Result<()> {
    if truth.len() != estimate.len() {
        return Err(Error::Shape(format!(
            "truth has {} preambles, estimate has {}",
            truth.len(),
            estimate.len()
        )));
    }
    Ok(())
}

fn over_trials(truth: &[u32], estimates: &[Vec<u32>], per: fn(u32, u32) -> f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Config("at least one trial is required".into()));
    }
    let mut total = 0.0;
    for e in estimates {
        check_counts(truth, e)?;
        total += truth.iter().zip(e).map(|(&t, &v)| per(t, v)).sum::<f64>();
    }
    Ok(total / (estimates.len() * truth.len().max(1)) as f64)
}

fn squared(t: u32, v: u32) -> f64 {
    let d = f64::from(t) - f64::from(v);
    d * d
}

fn mismatch(t: u32, v: u32) -> f64 {
    f64::from(u8::from(t != v))
}

/// Mean of `(x_k − x̃_k)²` over trials and preambles.
pub fn mse(truth: &[u32], estimates: &[Vec<u32>]) -> Result<f64> {
    over_trials(truth, estimates, squared)
}

/// Fraction of `(trial, k)` pairs with `x_k ≠ x̃_k`.
pub fn p_ade(truth: &[u32], estimates: &[Vec<u32>]) -> Result<f64> {
    over_trials(truth, estimates, mismatch)
}

/// Number of singleton preambles that were detected as singletons.
pub fn throughput(truth: &[u32], estimate: &[u32]) -> Result<usize> {
    check_counts(truth, estimate)?;
    Ok(truth
        .iter()
        .zip(estimate)
        .filter(|&(&t, &e)| t == 1 && e == 1)
        .count())
}

/// Per-trial scores of one detector on one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialScore {
    pub mse: f64,
    pub p_ade: f64,
    pub throughput: f64,
}

impl TrialScore {
    pub fn new(truth: &[u32], estimate: &[u32]) -> Result<Self> {
        let e = [estimate.to_vec()];
        Ok(Self {
            mse: mse(truth, &e)?,
            p_ade: p_ade(truth, &e)?,
            throughput: throughput(truth, estimate)? as f64,
        })
    }
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::Config("at least one trial is required".into()));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Ok(Self { mean, se })
    }
}

/// Trial means and standard errors of the detection metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionSummary {
    pub mse: MeanSe,
    pub p_ade: MeanSe,
    pub throughput: MeanSe,
    pub trials: usize,
}

impl DetectionSummary {
    pub fn from_trials(scores: &[TrialScore]) -> Result<Self> {
        let col = |f: fn(&TrialScore) -> f64| scores.iter().map(f).collect::<Vec<_>>();
        Ok(Self {
            mse: MeanSe::of(&col(|s| s.mse))?,
            p_ade: MeanSe::of(&col(|s| s.p_ade))?,
            throughput: MeanSe::of(&col(|s| s.throughput))?,
            trials: scores.len(),
        })
    }
}

/// All headline numbers of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    /// Percent.
    pub rms: f64,
    /// Percent.
    pub prd: f64,
    pub mse: f64,
    pub p_ade: f64,
    pub throughput: f64,
    pub trial_count: usize,
}

impl MetricsReport {
    pub fn new(rms: f64, prd: f64, detection: &DetectionSummary) -> Result<Self> {
        let r = Self {
            rms,
            prd,
            mse: detection.mse.mean,
            p_ade: detection.p_ade.mean,
            throughput: detection.throughput.mean,
            trial_count: detection.trials,
        };
        let finite = [r.rms, r.prd, r.mse, r.p_ade, r.throughput]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(0.0..=1.0).contains(&r.p_ade) || r.trial_count == 0 {
            return Err(Error::Data(format!("inconsistent metrics report {r:?}")));
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rms_prd_examples() {
        assert_eq!(rms(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rms(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 353.553_390_593_273_8).abs() < 1e-9);
        assert!((prd(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(prd(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert!(matches!(
            prd(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(rms(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn count_metric_examples() {
        let truth = vec![1u32; 20];
        let mut est = truth.clone();
        assert_eq!(mse(&truth, &[est.clone()]).unwrap(), 0.0);
        est[3] = 2;
        assert!((mse(&truth, &[est.clone()]).unwrap() - 0.05).abs() < 1e-15);
        assert!((p_ade(&truth, &[est.clone()]).unwrap() - 0.05).abs() < 1e-15);
        est[3] = 3;
        assert!((mse(&truth, &[est.clone()]).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(p_ade(&truth, &[vec![0; 20]]).unwrap(), 1.0);
        assert!(matches!(mse(&truth, &[]), Err(Error::Config(_))));
    }

    #[test]
    fn throughput_examples() {
        assert_eq!(throughput(&[1, 1, 2], &[1, 0, 2]).unwrap(), 1);
        assert_eq!(throughput(&[2, 3, 2], &[1, 1, 1]).unwrap(), 0);
        let t = [1, 1, 1, 1, 1, 0, 2];
        assert_eq!(throughput(&t, &t).unwrap(), 5);
    }

    #[test]
    fn mean_se() {
        let m = MeanSe::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.mean, 2.5);
        assert!((m.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanSe::of(&[7.0]).unwrap().se, 0.0);
    }
}

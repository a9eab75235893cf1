//! Gaussian log-likelihood of a count vector and its gradient.
//!
//! Everything is expressed through the per-frame scatter matrix
//! `S = Σ_t y_t y_tᴴ`, which is a sufficient statistic: the quadratic term is
//! `Σ_t y_tᴴ φ⁻¹ y_t = tr(φ⁻¹ S)` and the score term
//! `Σ_t |z_kᴴ φ⁻¹ y_t|² = a_kᴴ S a_k` with `a_k = φ⁻¹ z_k`. This makes each
//! evaluation independent of the number of antennas.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{dot_conj, CMatrix, HermitianCholesky};
use crate::ra_model::{model_covariance, PreamblePool, ReceivedFrame};

/// Particle floor used by the blind likelihood unless configured otherwise.
pub const DEFAULT_FLOOR: f64 = 1e-3;

const JITTER_SCALE: f64 = 1e-9;
const IMAG_TOLERANCE: f64 = 1e-8;

/// Scatter matrix of a frame.
#[derive(Debug, Clone)]
pub struct FrameStats {
    scatter: CMatrix,
    antennas: usize,
}

impl FrameStats {
    pub fn new(frame: &ReceivedFrame) -> Result<Self> {
        Self::from_samples(&frame.y)
    }

    /// `y` is `L × T`.
    pub fn from_samples(y: &CMatrix) -> Result<Self> {
        if !y.is_finite() {
            return Err(Error::Data(
                "received samples contain non-finite entries".into(),
            ));
        }
        let l = y.rows();
        let mut s = CMatrix::zeros(l, l);
        for col in y.columns() {
            for j in 0..l {
                let cj = col[j].conj();
                for i in 0..=j {
                    s[(i, j)] += col[i] * cj;
                }
            }
        }
        for j in 0..l {
            s[(j, j)] = Complex64::new(s[(j, j)].re, 0.0);
            for i in 0..j {
                s[(j, i)] = s[(i, j)].conj();
            }
        }
        Ok(Self {
            scatter: s,
            antennas: y.cols(),
        })
    }

    pub fn scatter(&self) -> &CMatrix {
        &self.scatter
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }
}

/// Factor a Hermitian matrix, retrying once with a small diagonal jitter.
pub fn factor_with_jitter(m: &CMatrix) -> Result<HermitianCholesky> {
    match HermitianCholesky::factor(m) {
        Ok(c) => Ok(c),
        Err(_) => {
            let l = m.rows();
            let trace: f64 = (0..l).map(|i| m[(i, i)].re).sum();
            let jitter = JITTER_SCALE * trace / l.max(1) as f64;
            let mut bumped = m.clone();
            for i in 0..l {
                bumped[(i, i)] += Complex64::new(jitter, 0.0);
            }
            HermitianCholesky::factor(&bumped).map_err(|_| {
                Error::numerical(format!(
                    "covariance is singular even after jitter {jitter:e} (trace {trace:e})"
                ))
            })
        }
    }
}

fn real_part(z: Complex64, what: &str) -> Result<f64> {
    if z.im.abs() > IMAG_TOLERANCE * z.re.abs() && z.im.abs() > f64::MIN_POSITIVE {
        return Err(Error::numerical(format!(
            "{what} should be real but has imaginary part {:e} against real part {:e}",
            z.im, z.re
        )));
    }
    Ok(z.re)
}

/// The likelihood `ln g(Y | x)` with `η = 0`, either with a known noise power
/// or blind (noise term removed, counts floored).
#[derive(Debug, Clone, Copy)]
pub struct Likelihood<'a> {
    pool: &'a PreamblePool,
    beta: f64,
    noise_power: f64,
    floor: Option<f64>,
}

impl<'a> Likelihood<'a> {
    /// Covariance `β² Z C_x Zᴴ + δ I`.
    ///
    /// Negative counts are accepted as long as the covariance stays positive definite.
    pub fn aware(pool: &'a PreamblePool, beta: f64, noise_power: f64) -> Result<Self> {
        if !(noise_power >= 0.0) || !noise_power.is_finite() {
            return Err(Error::Config(format!(
                "noise power must be >= 0, got {noise_power}"
            )));
        }
        Self::build(pool, beta, noise_power, None)
    }

    /// Covariance `β² Z C_x Zᴴ` with every count evaluated at `max(x, floor)`.
    pub fn blind(pool: &'a PreamblePool, beta: f64, floor: f64) -> Result<Self> {
        if !(floor > 0.0) || !floor.is_finite() {
            return Err(Error::Config(format!(
                "blind floor must be > 0, got {floor}"
            )));
        }
        Self::build(pool, beta, 0.0, Some(floor))
    }

    /// Known noise power plus a floor on the counts.
    pub fn aware_floored(
        pool: &'a PreamblePool,
        beta: f64,
        noise_power: f64,
        floor: f64,
    ) -> Result<Self> {
        let mut lk = Self::aware(pool, beta, noise_power)?;
        if !(floor >= 0.0) || !floor.is_finite() {
            return Err(Error::Config(format!("floor must be >= 0, got {floor}")));
        }
        lk.floor = Some(floor);
        Ok(lk)
    }

    fn build(
        pool: &'a PreamblePool,
        beta: f64,
        noise_power: f64,
        floor: Option<f64>,
    ) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::Config(format!("beta must be > 0, got {beta}")));
        }
        Ok(Self {
            pool,
            beta,
            noise_power,
            floor,
        })
    }

    pub fn pool(&self) -> &PreamblePool {
        self.pool
    }

    /// Lower bound applied to the counts, if any.
    pub fn floor(&self) -> Option<f64> {
        self.floor
    }

    fn effective_counts(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.pool.count() {
            return Err(Error::Shape(format!(
                "count vector has {} entries, pool has {} preambles",
                x.len(),
                self.pool.count()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("count vector has non-finite entries".into()));
        }
        Ok(match self.floor {
            Some(f) => x.iter().map(|&v| v.max(f)).collect(),
            None => x.to_vec(),
        })
    }

    fn check_stats(&self, stats: &FrameStats) -> Result<()> {
        if stats.scatter.rows() != self.pool.len() {
            return Err(Error::Shape(format!(
                "frame has {} samples per antenna, preambles have length {}",
                stats.scatter.rows(),
                self.pool.len()
            )));
        }
        Ok(())
    }

    /// Factor of the covariance at `x`.
    pub fn factor(&self, x: &[f64]) -> Result<HermitianCholesky> {
        let xe = self.effective_counts(x)?;
        factor_with_jitter(&model_covariance(
            self.pool,
            &xe,
            self.beta,
            self.noise_power,
        ))
    }

    /// `−tr(φ⁻¹ S) − T ln det φ`.
    pub fn value(&self, x: &[f64], stats: &FrameStats) -> Result<f64> {
        self.check_stats(stats)?;
        let chol = self.factor(x)?;
        let l = self.pool.len();
        let mut trace = Complex64::new(0.0, 0.0);
        let mut col = vec![Complex64::new(0.0, 0.0); l];
        for j in 0..l {
            col.copy_from_slice(stats.scatter.col(j));
            chol.solve(&mut col);
            trace += col[j];
        }
        let quad = real_part(trace, "quadratic form")?;
        Ok(-quad - stats.antennas as f64 * chol.log_det())
    }

    /// `∂/∂x_k = β² (a_kᴴ S a_k − T z_kᴴ a_k)` with `a_k = φ⁻¹ z_k`.
    pub fn score(&self, x: &[f64], stats: &FrameStats) -> Result<Vec<f64>> {
        self.check_stats(stats)?;
        let chol = self.factor(x)?;
        let l = self.pool.len();
        let b2 = self.beta * self.beta;
        let t = stats.antennas as f64;
        let s = &stats.scatter;
        let mut a = vec![Complex64::new(0.0, 0.0); l];
        let mut sa = vec![Complex64::new(0.0, 0.0); l];
        let mut out = Vec::with_capacity(self.pool.count());
        for k in 0..self.pool.count() {
            let z = self.pool.preamble(k);
            a.copy_from_slice(z);
            chol.solve(&mut a);
            sa.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for (j, &aj) in a.iter().enumerate() {
                for (dst, &sij) in sa.iter_mut().zip(s.col(j)) {
                    *dst += sij * aj;
                }
            }
            let q = real_part(dot_conj(&a, &sa), "projected energy")?;
            let d = real_part(dot_conj(z, &a), "preamble energy")?;
            out.push(b2 * (q - t * d));
        }
        Ok(out)
    }
}

/// `Σ_t [−y_tᴴ φ(x)⁻¹ y_t − ln det φ(x)]`.
pub fn log_likelihood(
    x: &[f64],
    frame: &ReceivedFrame,
    pool: &PreamblePool,
    beta: f64,
    noise_power: f64,
) -> Result<f64> {
    Likelihood::aware(pool, beta, noise_power)?.value(x, &FrameStats::new(frame)?)
}

/// Gradient of [`log_likelihood`] with respect to `x`.
pub fn score(
    x: &[f64],
    frame: &ReceivedFrame,
    pool: &PreamblePool,
    beta: f64,
    noise_power: f64,
) -> Result<Vec<f64>> {
    Likelihood::aware(pool, beta, noise_power)?.score(x, &FrameStats::new(frame)?)
}

/// Log-likelihood with the noise term removed, counts floored at [`DEFAULT_FLOOR`].
pub fn blind_log_likelihood(
    x: &[f64],
    frame: &ReceivedFrame,
    pool: &PreamblePool,
    beta: f64,
) -> Result<f64> {
    Likelihood::blind(pool, beta, DEFAULT_FLOOR)?.value(x, &FrameStats::new(frame)?)
}

/// Gradient of [`blind_log_likelihood`].
pub fn score_blind(
    x: &[f64],
    frame: &ReceivedFrame,
    pool: &PreamblePool,
    beta: f64,
) -> Result<Vec<f64>> {
    Likelihood::blind(pool, beta, DEFAULT_FLOOR)?.score(x, &FrameStats::new(frame)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ra_model::{
        draw_activity, generate_preamble_pool, synthesize_frame, ActivityVector,
    };
    use crate::rng::seeded;
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn scalar_setup(y: Complex64) -> (PreamblePool, ReceivedFrame) {
        let pool =
            PreamblePool::from_matrix(CMatrix::from_col_major(1, 1, vec![c(1.0, 0.0)]).unwrap())
                .unwrap();
        let frame = ReceivedFrame {
            y: CMatrix::from_col_major(1, 1, vec![y]).unwrap(),
            noise_power: 0.5,
            effective_gains: CMatrix::zeros(1, 1),
            truth: ActivityVector::from_assignments(1, vec![0, 0]).unwrap(),
        };
        (pool, frame)
    }

    #[test]
    fn scalar_closed_forms() {
        let (pool, frame) = scalar_setup(c(1.0, 0.0));
        let v = log_likelihood(&[2.0], &frame, &pool, 1.0, 0.5).unwrap();
        assert!((v - (-1.0 / 2.5 - 2.5f64.ln())).abs() < 1e-14);
        assert!((v + 1.3163).abs() < 1e-4);
        let b = blind_log_likelihood(&[2.0], &frame, &pool, 1.0).unwrap();
        assert!((b - (-0.5 - 2f64.ln())).abs() < 1e-14);
        assert!((b + 1.1931).abs() < 1e-4);

        let (pool, frame) = scalar_setup(c(2.0, 0.0));
        let g = score_blind(&[1.0], &frame, &pool, 1.0).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-14);
        // stationary at Σ|y|²/T = 4
        let g = score_blind(&[4.0], &frame, &pool, 1.0).unwrap();
        assert!(g[0].abs() < 1e-14);
    }

    #[test]
    fn zero_activity_unit_noise() {
        let mut rng = seeded(1);
        let pool = generate_preamble_pool(5, 4, &mut rng).unwrap();
        let act = draw_activity(3, 5, &mut rng).unwrap();
        let frame = synthesize_frame(&pool, &act, 1.0, 3, 0.3, &mut rng).unwrap();
        let v = log_likelihood(&[0.0; 5], &frame, &pool, 1.0, 1.0).unwrap();
        let energy: f64 = frame.y.as_slice().iter().map(|z| z.norm_sqr()).sum();
        assert!((v + energy).abs() < 1e-12 * energy.max(1.0));
    }

    #[test]
    fn blind_equals_zero_noise_aware_and_floors() {
        let mut rng = seeded(2);
        let pool = generate_preamble_pool(6, 4, &mut rng).unwrap();
        let act = draw_activity(4, 6, &mut rng).unwrap();
        let frame = synthesize_frame(&pool, &act, 1.0, 3, 0.1, &mut rng).unwrap();
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(0.5..3.0)).collect();
        let a = log_likelihood(&x, &frame, &pool, 1.0, 0.0).unwrap();
        let b = blind_log_likelihood(&x, &frame, &pool, 1.0).unwrap();
        assert!((a - b).abs() < 1e-10 * a.abs());

        let mut low = x.clone();
        low[0] = -0.5;
        let mut at_floor = x.clone();
        at_floor[0] = DEFAULT_FLOOR;
        assert_eq!(
            blind_log_likelihood(&low, &frame, &pool, 1.0).unwrap(),
            blind_log_likelihood(&at_floor, &frame, &pool, 1.0).unwrap()
        );
        // slightly negative counts are fine while φ stays positive definite
        assert!(log_likelihood(&low, &frame, &pool, 1.0, 0.1)
            .unwrap()
            .is_finite());
        low[0] = -50.0;
        assert!(matches!(
            log_likelihood(&low, &frame, &pool, 1.0, 0.1),
            Err(Error::Numerical { .. })
        ));
    }

    #[test]
    fn global_phase_invariance() {
        let mut rng = seeded(3);
        let pool = generate_preamble_pool(6, 4, &mut rng).unwrap();
        let act = draw_activity(4, 6, &mut rng).unwrap();
        let frame = synthesize_frame(&pool, &act, 1.0, 2, 0.1, &mut rng).unwrap();
        let mut rotated = frame.clone();
        let phase = Complex64::from_polar(1.0, 0.7);
        for j in 0..rotated.y.cols() {
            for z in rotated.y.col_mut(j) {
                *z *= phase;
            }
        }
        let x = [1.0, 0.5, 2.0, 1.0, 0.2, 1.5];
        let a = log_likelihood(&x, &frame, &pool, 1.0, 0.1).unwrap();
        let b = log_likelihood(&x, &rotated, &pool, 1.0, 0.1).unwrap();
        assert!((a - b).abs() < 1e-10 * a.abs());
    }

    #[test]
    fn aware_score_matches_finite_differences() {
        let mut rng = seeded(4);
        let pool = generate_preamble_pool(6, 4, &mut rng).unwrap();
        let act = draw_activity(5, 6, &mut rng).unwrap();
        let frame = synthesize_frame(&pool, &act, 1.0, 3, 0.2, &mut rng).unwrap();
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(0.5..3.0)).collect();
        let g = score(&x, &frame, &pool, 1.0, 0.2).unwrap();
        let h = 1e-5;
        for k in 0..6 {
            let mut p = x.clone();
            let mut m = x.clone();
            p[k] += h;
            m[k] -= h;
            let fd = (log_likelihood(&p, &frame, &pool, 1.0, 0.2).unwrap()
                - log_likelihood(&m, &frame, &pool, 1.0, 0.2).unwrap())
                / (2.0 * h);
            assert!(
                (fd - g[k]).abs() < 1e-5 * g[k].abs().max(1.0),
                "k={k} fd={fd} g={}",
                g[k]
            );
        }
    }

    #[test]
    fn singular_blind_covariance_is_reported() {
        let (pool, frame) = scalar_setup(c(1.0, 0.0));
        let lk = Likelihood::aware(&pool, 1.0, 0.0).unwrap();
        let err = lk
            .value(&[0.0], &FrameStats::new(&frame).unwrap())
            .unwrap_err();
        assert!(matches!(err, Error::Numerical { .. }));
    }

    #[test]
    fn shape_errors() {
        let (pool, frame) = scalar_setup(c(1.0, 0.0));
        assert!(matches!(
            log_likelihood(&[1.0, 2.0], &frame, &pool, 1.0, 0.5),
            Err(Error::Shape(_))
        ));
        assert!(Likelihood::blind(&pool, 1.0, 0.0).is_err());
        assert!(Likelihood::aware(&pool, 0.0, 1.0).is_err());
    }
}

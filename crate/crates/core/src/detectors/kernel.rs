//! Particle storage, RBF kernel bandwidth and the SVGD velocity field.

use rand::Rng;

use crate::error::{Error, Result};

/// `n` particles in `ℝᴷ`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    data: Vec<f64>,
    n: usize,
    k: usize,
    /// Number of updates applied so far.
    pub iteration: usize,
}

impl ParticleSet {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Config(
                "a particle set needs at least one particle".into(),
            ));
        }
        let k = rows[0].len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("particles have different dimensions".into()));
        }
        Self::from_flat(n, k, rows.concat())
    }

    pub fn from_flat(n: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config(
                "a particle set needs at least one particle".into(),
            ));
        }
        if data.len() != n * k {
            return Err(Error::Shape(format!(
                "{} values cannot form {n} particles of dimension {k}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("particles must be finite".into()));
        }
        Ok(Self {
            data,
            n,
            k,
            iteration: 0,
        })
    }

    /// Entries drawn independently from `U[low, high)`.
    pub fn uniform<R: Rng + ?Sized>(
        n: usize,
        k: usize,
        low: f64,
        high: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(low < high) {
            return Err(Error::Config(format!(
                "empty initialization interval [{low}, {high})"
            )));
        }
        let data = (0..n * k).map(|_| rng.random_range(low..high)).collect();
        Self::from_flat(n, k, data)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn particle_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.k];
        for i in 0..self.n {
            for (acc, v) in m.iter_mut().zip(self.particle(i)) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n as f64);
        m
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `h = med² / ln n` over all pairwise distances, floored at `h_min`.
///
/// With an even number of pairs the median is the mean of the two central
/// distances.
pub fn median_bandwidth(particles: &ParticleSet, h_min: f64) -> Result<f64> {
    let n = particles.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "median bandwidth needs at least two particles, got {n}"
        )));
    }
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sq_dist(particles.particle(i), particles.particle(j)).sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    Ok((med * med / (n as f64).ln()).max(h_min))
}

/// Bandwidth used by the detectors: the median heuristic, or 1 for a single particle.
pub fn detector_bandwidth(particles: &ParticleSet, h_min: f64) -> f64 {
    if particles.len() < 2 {
        1.0
    } else {
        median_bandwidth(particles, h_min).expect("two or more particles")
    }
}

/// `ω(x_j) = (1/n) Σᵢ [k(xᵢ, x_j) sᵢ + ∇_{xᵢ} k(xᵢ, x_j)]` for every particle `x_j`,
/// with `k(a, b) = exp(−‖a − b‖²/h)` and `scores` holding `sᵢ` row-major.
pub fn svgd_velocity(particles: &ParticleSet, scores: &[f64], h: f64) -> Result<Vec<f64>> {
    let (n, k) = (particles.len(), particles.dim());
    if scores.len() != n * k {
        return Err(Error::Shape(format!(
            "{} score entries for {n}x{k} particles",
            scores.len()
        )));
    }
    if !(h > 0.0) {
        return Err(Error::Config(format!(
            "kernel bandwidth must be > 0, got {h}"
        )));
    }
    let mut kmat = vec![1.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = (-sq_dist(particles.particle(i), particles.particle(j)) / h).exp();
            kmat[i * n + j] = v;
            kmat[j * n + i] = v;
        }
    }
    let mut out = vec![0.0; n * k];
    let inv_n = 1.0 / n as f64;
    for j in 0..n {
        let xj = particles.particle(j);
        let dst = &mut out[j * k..(j + 1) * k];
        for i in 0..n {
            let kij = kmat[i * n + j];
            let xi = particles.particle(i);
            let si = &scores[i * k..(i + 1) * k];
            for d in 0..k {
                dst[d] += kij * (si[d] - 2.0 / h * (xi[d] - xj[d]));
            }
        }
        dst.iter_mut().for_each(|v| *v *= inv_n);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn bandwidth_examples() {
        let two = ParticleSet::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!((median_bandwidth(&two, 1e-6).unwrap() - 1.0 / 2f64.ln()).abs() < 1e-15);
        let same = ParticleSet::from_rows(&vec![vec![1.0, 2.0]; 4]).unwrap();
        assert_eq!(median_bandwidth(&same, 1e-6).unwrap(), 1e-6);
        let one = ParticleSet::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(
            median_bandwidth(&one, 1e-6),
            Err(Error::Config(_))
        ));
        assert_eq!(detector_bandwidth(&one, 1e-6), 1.0);
        // four 1-D points: 6 distances {1,2,3,1,2,1} → sorted 1,1,1,2,2,3 → med 1.5
        let four = ParticleSet::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let h = median_bandwidth(&four, 1e-6).unwrap();
        assert!((h - 2.25 / 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn single_particle_velocity_is_score() {
        let p = ParticleSet::from_rows(&[vec![0.3, -1.0, 2.0]]).unwrap();
        let s = [1.5, -2.0, 0.25];
        assert_eq!(svgd_velocity(&p, &s, 0.7).unwrap(), s.to_vec());
    }

    #[test]
    fn repulsion_pushes_apart() {
        let p = ParticleSet::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let w = svgd_velocity(&p, &[0.0, 0.0], 1.0).unwrap();
        assert!(w[0] < 0.0 && w[1] > 0.0);
        assert!((w[0] + w[1]).abs() < 1e-15);
    }

    #[test]
    fn uniform_init_range_and_mean() {
        let p = ParticleSet::uniform(10, 6, 1.0, 1.1, &mut seeded(1)).unwrap();
        assert!(p.as_flat().iter().all(|&v| (1.0..1.1).contains(&v)));
        let rows = ParticleSet::from_rows(&[vec![1.0, 3.0], vec![2.0, 5.0]]).unwrap();
        assert_eq!(rows.mean(), vec![1.5, 4.0]);
        assert!(ParticleSet::from_rows(&[]).is_err());
        assert!(ParticleSet::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}

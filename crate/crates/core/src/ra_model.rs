//! Multi-antenna received-signal model for the first random-access step.
//!
//! Each of `M` active devices picks one of `K` preambles uniformly at random.
//! Under power control the per-device received amplitude reduces to the
//! small-scale fading `θ ~ CN(0, β²)`, so antenna `t` observes
//!
//! ```text
//! y_t = Z v_t + n_t,   v_{k,t} = Σ_{m ∈ N_k} θ_{m,t},   n_t ~ CN(0, δ I)
//! ```
//!
//! with `Z` the `L × K` preamble matrix.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bmht::concat_re_im;
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::rng::{derive_seed, seeded};

/// Draw one `CN(0, variance)` sample: real and imaginary parts i.i.d. `N(0, variance/2)`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let sd = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * sd, im * sd)
}

/// The `L × K` preamble matrix `Z`; column `k` is preamble `z_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreamblePool {
    z: CMatrix,
}

impl PreamblePool {
    /// Wrap an explicit preamble matrix (used by tests and toy instances).
    pub fn from_matrix(z: CMatrix) -> Result<Self> {
        if z.rows() == 0 || z.cols() == 0 {
            return Err(Error::Config("preamble matrix must be non-empty".into()));
        }
        if !z.is_finite() {
            return Err(Error::Data("preamble entries must be finite".into()));
        }
        Ok(Self { z })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.z
    }

    /// Preamble length `L`.
    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of preambles `K`.
    pub fn count(&self) -> usize {
        self.z.cols()
    }

    pub fn preamble(&self, k: usize) -> &[Complex64] {
        self.z.col(k)
    }

    /// The collision-detection regime has more preambles than samples (`K > L`).
    pub fn check_regime(&self) -> Result<()> {
        if self.count() <= self.len() {
            return Err(Error::Config(format!(
                "expected K > L, got K = {}, L = {} (set allow_k_le_l for toy instances)",
                self.count(),
                self.len()
            )));
        }
        Ok(())
    }
}

/// Non-orthogonal pool with i.i.d. `CN(0, 1/L)` entries.
pub fn generate_preamble_pool<R: Rng + ?Sized>(
    k: usize,
    l: usize,
    rng: &mut R,
) -> Result<PreamblePool> {
    if k == 0 || l == 0 {
        return Err(Error::Config(format!(
            "preamble pool needs K >= 1 and L >= 1, got K = {k}, L = {l}"
        )));
    }
    let var = 1.0 / l as f64;
    let mut data = Vec::with_capacity(k * l);
    for _ in 0..k * l {
        data.push(complex_gaussian(rng, var));
    }
    PreamblePool::from_matrix(CMatrix::from_col_major(l, k, data)?)
}

/// Which preamble each active device chose, and the resulting per-preamble counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityVector {
    pub counts: Vec<u32>,
    pub assignments: Vec<usize>,
}

impl ActivityVector {
    pub fn from_assignments(k: usize, assignments: Vec<usize>) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("activity needs K >= 1".into()));
        }
        let mut counts = vec![0u32; k];
        for &a in &assignments {
            if a >= k {
                return Err(Error::Config(format!(
                    "device assigned to preamble {a} >= K = {k}"
                )));
            }
            counts[a] += 1;
        }
        Ok(Self {
            counts,
            assignments,
        })
    }

    /// Number of active devices `M`.
    pub fn devices(&self) -> usize {
        self.assignments.len()
    }

    pub fn preambles(&self) -> usize {
        self.counts.len()
    }
}

/// Each of `m` devices picks a preamble uniformly from `0..k`.
pub fn draw_activity<R: Rng + ?Sized>(m: usize, k: usize, rng: &mut R) -> Result<ActivityVector> {
    if k == 0 {
        return Err(Error::Config("activity needs K >= 1".into()));
    }
    let assignments = (0..m).map(|_| rng.random_range(0..k)).collect();
    ActivityVector::from_assignments(k, assignments)
}

/// A group of devices restricted to a contiguous sub-pool of preambles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreambleGroup {
    pub first: usize,
    pub size: usize,
    pub devices: usize,
}

/// Activity for disjoint preamble pools, e.g. delay-sensitive and delay-tolerant devices.
pub fn draw_grouped_activity<R: Rng + ?Sized>(
    k: usize,
    groups: &[PreambleGroup],
    rng: &mut R,
) -> Result<ActivityVector> {
    let mut assignments = Vec::new();
    for g in groups {
        if g.size == 0 || g.first + g.size > k {
            return Err(Error::Config(format!(
                "group [{}, {}) does not fit in K = {k}",
                g.first,
                g.first + g.size
            )));
        }
        assignments.extend((0..g.devices).map(|_| g.first + rng.random_range(0..g.size)));
    }
    ActivityVector::from_assignments(k, assignments)
}

/// Small-scale fading `θ_{m,t} ~ CN(0, β²)`, stored `M × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub theta: CMatrix,
    pub beta: f64,
}

impl ChannelRealization {
    pub fn draw<R: Rng + ?Sized>(m: usize, t: usize, beta: f64, rng: &mut R) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        let var = beta * beta;
        let mut data = Vec::with_capacity(m * t);
        for _ in 0..m * t {
            data.push(complex_gaussian(rng, var));
        }
        Ok(Self {
            theta: CMatrix::from_col_major(m, t, data)?,
            beta,
        })
    }
}

/// Received samples of one slot across all antennas.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedFrame {
    /// `L × T`, column `t` is `y_t`.
    pub y: CMatrix,
    pub noise_power: f64,
    /// `K × T`, column `t` is `v_t`.
    pub effective_gains: CMatrix,
    pub truth: ActivityVector,
}

impl ReceivedFrame {
    pub fn antennas(&self) -> usize {
        self.y.cols()
    }

    pub fn samples(&self) -> usize {
        self.y.rows()
    }
}

/// `v_{k,t} = Σ_{m ∈ N_k} θ_{m,t}`.
pub fn effective_gains(activity: &ActivityVector, channel: &ChannelRealization) -> Result<CMatrix> {
    let t = channel.theta.cols();
    if channel.theta.rows() != activity.devices() {
        return Err(Error::Config(format!(
            "channel has {} devices, activity has {}",
            channel.theta.rows(),
            activity.devices()
        )));
    }
    let mut v = CMatrix::zeros(activity.preambles(), t);
    for (m, &k) in activity.assignments.iter().enumerate() {
        for ti in 0..t {
            v[(k, ti)] += channel.theta[(m, ti)];
        }
    }
    Ok(v)
}

/// Add `CN(0, δ)` noise to every entry.
pub fn add_noise<R: Rng + ?Sized>(y: &mut CMatrix, noise_power: f64, rng: &mut R) {
    if noise_power == 0.0 {
        return;
    }
    for j in 0..y.cols() {
        for z in y.col_mut(j) {
            *z += complex_gaussian(rng, noise_power);
        }
    }
}

/// Synthesize `y_t = Z v_t + n_t` for a given channel.
pub fn synthesize_with_channel<R: Rng + ?Sized>(
    pool: &PreamblePool,
    activity: &ActivityVector,
    channel: &ChannelRealization,
    noise_power: f64,
    rng: &mut R,
) -> Result<ReceivedFrame> {
    if activity.preambles() != pool.count() {
        return Err(Error::Config(format!(
            "activity covers {} preambles, pool has {}",
            activity.preambles(),
            pool.count()
        )));
    }
    if !(noise_power >= 0.0) || !noise_power.is_finite() {
        return Err(Error::Config(format!(
            "noise power must be >= 0, got {noise_power}"
        )));
    }
    let v = effective_gains(activity, channel)?;
    let mut y = pool.matrix().matmul(&v)?;
    add_noise(&mut y, noise_power, rng);
    Ok(ReceivedFrame {
        y,
        noise_power,
        effective_gains: v,
        truth: activity.clone(),
    })
}

/// Draw a channel for `antennas` antennas and synthesize the frame.
pub fn synthesize_frame<R: Rng + ?Sized>(
    pool: &PreamblePool,
    activity: &ActivityVector,
    beta: f64,
    antennas: usize,
    noise_power: f64,
    rng: &mut R,
) -> Result<ReceivedFrame> {
    if antennas == 0 {
        return Err(Error::Config("need at least one antenna".into()));
    }
    let channel = ChannelRealization::draw(activity.devices(), antennas, beta, rng)?;
    synthesize_with_channel(pool, activity, &channel, noise_power, rng)
}

/// `δ = β² · 10^(−SNR/10)`; power control puts every device at received power β².
pub fn snr_to_noise_power(snr_db: f64, beta: f64) -> f64 {
    beta * beta * 10f64.powf(-snr_db / 10.0)
}

/// The model covariance `β² Z C_x Zᴴ + δ I` for a (real, nonnegative) count vector.
pub fn model_covariance(pool: &PreamblePool, x: &[f64], beta: f64, noise_power: f64) -> CMatrix {
    let l = pool.len();
    let b2 = beta * beta;
    let mut phi = CMatrix::zeros(l, l);
    for (k, &xk) in x.iter().enumerate() {
        if xk == 0.0 {
            continue;
        }
        let z = pool.preamble(k);
        for j in 0..l {
            let zj = z[j].conj() * (b2 * xk);
            for i in 0..l {
                phi[(i, j)] += z[i] * zj;
            }
        }
    }
    for i in 0..l {
        phi[(i, i)] += Complex64::new(noise_power, 0.0);
    }
    phi
}

/// Generation settings for a denoising corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub snr_db: f64,
    pub beta: f64,
    pub seed: u64,
    pub count: usize,
    /// Antennas per synthesized frame; each antenna column becomes one sample.
    #[serde(default = "one")]
    pub antennas: usize,
}

fn one() -> usize {
    1
}

impl DatasetConfig {
    pub fn new(k: usize, l: usize, m: usize, snr_db: f64, count: usize, seed: u64) -> Self {
        Self {
            k,
            l,
            m,
            snr_db,
            beta: 1.0,
            seed,
            count,
            antennas: 1,
        }
    }
}

/// Noisy/clean pairs of single-antenna vectors, stored as `[Re; Im]` of length `2L`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseDataset {
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
    pub metadata: DatasetConfig,
}

impl DenoiseDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Write `<stem>.csv` (one pair per row, `2L` noisy then `2L` clean values)
    /// and `<stem>.json` (the generation metadata).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let csv = stem.with_extension("csv");
        let mut w = BufWriter::new(fs::File::create(&csv)?);
        for (noisy, clean) in &self.pairs {
            let row: Vec<String> = noisy
                .iter()
                .chain(clean)
                .map(|v| format!("{v:e}"))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        let meta = serde_json::to_string_pretty(&self.metadata)
            .map_err(|e| Error::Persistence(e.to_string()))?;
        fs::write(stem.with_extension("json"), meta)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let meta_text = fs::read_to_string(stem.with_extension("json"))?;
        let metadata: DatasetConfig =
            serde_json::from_str(&meta_text).map_err(|e| Error::Persistence(e.to_string()))?;
        let width = 2 * metadata.l;
        let reader = BufReader::new(fs::File::open(stem.with_extension("csv"))?);
        let mut pairs = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let values = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Persistence(format!("row {i}: {e}")))?;
            if values.len() != 2 * width {
                return Err(Error::Persistence(format!(
                    "row {i} has {} values, expected {}",
                    values.len(),
                    2 * width
                )));
            }
            let (noisy, clean) = values.split_at(width);
            pairs.push((noisy.to_vec(), clean.to_vec()));
        }
        if pairs.len() != metadata.count {
            return Err(Error::Persistence(format!(
                "sidecar declares {} pairs, file holds {}",
                metadata.count,
                pairs.len()
            )));
        }
        Ok(Self { pairs, metadata })
    }
}

/// Generate a corpus of noisy/clean pairs; each pair shares one activity and channel draw.
///
/// A fresh preamble pool is drawn per frame so the denoiser never sees a
/// single fixed `Z`.
pub fn generate_denoise_dataset(cfg: &DatasetConfig) -> Result<DenoiseDataset> {
    if cfg.count == 0 {
        return Err(Error::Config("dataset sample count must be >= 1".into()));
    }
    if cfg.antennas == 0 {
        return Err(Error::Config(
            "dataset needs at least one antenna per frame".into(),
        ));
    }
    let delta = snr_to_noise_power(cfg.snr_db, cfg.beta);
    let mut pairs = Vec::with_capacity(cfg.count);
    let mut frame_idx = 0u64;
    while pairs.len() < cfg.count {
        let (clean, noisy) = dataset_frame(cfg, delta, frame_idx)?;
        for t in 0..clean.antennas() {
            if pairs.len() == cfg.count {
                break;
            }
            pairs.push((concat_re_im(noisy.y.col(t)), concat_re_im(clean.y.col(t))));
        }
        frame_idx += 1;
    }
    Ok(DenoiseDataset {
        pairs,
        metadata: cfg.clone(),
    })
}

/// The `(clean, noisy)` frames behind frame `index` of a corpus.
pub fn dataset_frame(
    cfg: &DatasetConfig,
    noise_power: f64,
    index: u64,
) -> Result<(ReceivedFrame, ReceivedFrame)> {
    let mut rng = seeded(derive_seed(cfg.seed, &[index]));
    let pool = generate_preamble_pool(cfg.k, cfg.l, &mut rng)?;
    let activity = draw_activity(cfg.m, cfg.k, &mut rng)?;
    let channel = ChannelRealization::draw(cfg.m, cfg.antennas, cfg.beta, &mut rng)?;
    let clean = synthesize_with_channel(&pool, &activity, &channel, 0.0, &mut rng)?;
    let mut noisy = clean.clone();
    add_noise(&mut noisy.y, noise_power, &mut rng);
    noisy.noise_power = noise_power;
    Ok((clean, noisy))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_is_deterministic_and_scaled() {
        let a = generate_preamble_pool(20, 10, &mut seeded(3)).unwrap();
        let b = generate_preamble_pool(20, 10, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
        let mean_power = a
            .matrix()
            .as_slice()
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            / 200.0;
        assert!((0.07..=0.13).contains(&mean_power), "{mean_power}");
    }

    #[test]
    fn pool_variance_large_sample() {
        let p = generate_preamble_pool(200, 50, &mut seeded(11)).unwrap();
        let n = p.matrix().as_slice().len() as f64;
        let v = p
            .matrix()
            .as_slice()
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            / n;
        assert!((v - 0.02).abs() < 0.02 * 0.05, "{v}");
    }

    #[test]
    fn pool_rejects_zero_dims() {
        assert!(matches!(
            generate_preamble_pool(0, 10, &mut seeded(1)),
            Err(Error::Config(_))
        ));
        assert!(generate_preamble_pool(4, 0, &mut seeded(1)).is_err());
    }

    #[test]
    fn regime_check() {
        let p = generate_preamble_pool(6, 6, &mut seeded(1)).unwrap();
        assert!(p.check_regime().is_err());
        let p = generate_preamble_pool(7, 6, &mut seeded(1)).unwrap();
        assert!(p.check_regime().is_ok());
    }

    #[test]
    fn activity_edge_cases() {
        let a = draw_activity(0, 5, &mut seeded(1)).unwrap();
        assert_eq!(a.counts, vec![0; 5]);
        let a = draw_activity(6, 1, &mut seeded(1)).unwrap();
        assert_eq!(a.counts, vec![6]);
        assert!(draw_activity(3, 0, &mut seeded(1)).is_err());
    }

    #[test]
    fn collisions_are_common_at_full_load() {
        // birthday problem: P(no collision) = 20!/20^20 ≈ 2.3e-8
        let mut rng = seeded(5);
        let trials = 10_000;
        let collided = (0..trials)
            .filter(|_| {
                draw_activity(20, 20, &mut rng)
                    .unwrap()
                    .counts
                    .iter()
                    .any(|&c| c >= 2)
            })
            .count();
        assert!(collided as f64 / trials as f64 > 0.99);
    }

    #[test]
    fn grouped_activity_respects_pools() {
        let groups = [
            PreambleGroup {
                first: 0,
                size: 10,
                devices: 5,
            },
            PreambleGroup {
                first: 10,
                size: 10,
                devices: 9,
            },
        ];
        let a = draw_grouped_activity(20, &groups, &mut seeded(2)).unwrap();
        assert_eq!(a.counts[..10].iter().sum::<u32>(), 5);
        assert_eq!(a.counts[10..].iter().sum::<u32>(), 9);
        let bad = [PreambleGroup {
            first: 15,
            size: 10,
            devices: 1,
        }];
        assert!(draw_grouped_activity(20, &bad, &mut seeded(2)).is_err());
    }

    #[test]
    fn single_device_noiseless_frame() {
        let mut rng = seeded(9);
        let pool = generate_preamble_pool(4, 3, &mut rng).unwrap();
        let act = ActivityVector::from_assignments(4, vec![0]).unwrap();
        let ch = ChannelRealization::draw(1, 5, 1.0, &mut rng).unwrap();
        let f = synthesize_with_channel(&pool, &act, &ch, 0.0, &mut rng).unwrap();
        for t in 0..5 {
            for i in 0..3 {
                assert_eq!(f.y[(i, t)], pool.preamble(0)[i] * ch.theta[(0, t)]);
            }
        }
    }

    #[test]
    fn pure_noise_has_unit_variance() {
        let mut rng = seeded(4);
        let pool = generate_preamble_pool(5, 4, &mut rng).unwrap();
        let act = draw_activity(0, 5, &mut rng).unwrap();
        let f = synthesize_frame(&pool, &act, 1.0, 5000, 1.0, &mut rng).unwrap();
        let v = f.y.as_slice().iter().map(|z| z.norm_sqr()).sum::<f64>() / 20_000.0;
        assert!((v - 1.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let mut rng = seeded(4);
        let pool = generate_preamble_pool(5, 4, &mut rng).unwrap();
        let act = draw_activity(3, 6, &mut rng).unwrap();
        assert!(matches!(
            synthesize_frame(&pool, &act, 1.0, 2, 0.1, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn snr_mapping() {
        assert_eq!(snr_to_noise_power(0.0, 1.0), 1.0);
        assert!((snr_to_noise_power(10.0, 1.0) - 0.1).abs() < 1e-15);
        assert!((snr_to_noise_power(-10.0, 2.0) - 40.0).abs() < 1e-12);
    }

    #[test]
    fn dataset_pairs_share_realization() {
        let cfg = DatasetConfig::new(20, 10, 20, 10.0, 5, 77);
        let ds = generate_denoise_dataset(&cfg).unwrap();
        assert_eq!(ds.len(), 5);
        let delta = snr_to_noise_power(10.0, 1.0);
        for (i, (noisy, clean)) in ds.pairs.iter().enumerate() {
            assert_eq!(noisy.len(), 20);
            assert_eq!(clean.len(), 20);
            let (c, _) = dataset_frame(&cfg, delta, i as u64).unwrap();
            assert_eq!(clean, &concat_re_im(c.y.col(0)));
        }
        let empty = DatasetConfig::new(20, 10, 20, 10.0, 0, 77);
        assert!(generate_denoise_dataset(&empty).is_err());
    }

    #[test]
    fn dataset_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig::new(8, 4, 3, 6.0, 7, 1);
        let ds = generate_denoise_dataset(&cfg).unwrap();
        let stem = dir.path().join("train");
        ds.save(&stem).unwrap();
        let sidecar: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(stem.with_extension("json")).unwrap())
                .unwrap();
        for key in ["K", "L", "M", "snr_db", "beta", "seed", "count"] {
            assert!(sidecar.get(key).is_some(), "missing {key}");
        }
        let back = DenoiseDataset::load(&stem).unwrap();
        assert_eq!(back, ds);
    }
}

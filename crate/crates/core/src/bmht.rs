//! Trainable block modified-Hadamard denoising layer.
//!
//! A received vector `y ∈ ℂᴸ` is flattened to `[Re y; Im y] ∈ ℝ²ᴸ`, zero-padded
//! to a multiple of eight and cut into blocks. Every block goes through
//!
//! ```text
//! c = Q₈ b,   v = c ∘ u,   p = sign(v)·(|v| − T)₊,   ŷ = Q₈⁻¹ p
//! ```
//!
//! with one shared pair `(u, T)` of 8-vectors for all blocks. Training
//! minimizes the per-block loss `(1/8)‖ŷ − clean‖² + ρ Σⱼ KL(κ ‖ σ(pⱼ))`
//! with AdamW.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;
use crate::mht::{apply8, hadamard_matrix, q8, q8_inv};
use crate::ra_model::{DenoiseDataset, ReceivedFrame};
use crate::rng::seeded;

/// Block size.
pub const S: usize = 8;

pub type Block = [f64; S];

const SIGMOID_FLOOR: f64 = 1e-7;
const PARAM_FORMAT_VERSION: u32 = 1;

/// Scaling weights `u` and soft thresholds `T`, shared by every block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BmhtParams {
    pub u: Block,
    pub thresholds: Block,
}

impl BmhtParams {
    /// `u = 1`, `T = 0`: the layer is the exact identity.
    pub fn identity() -> Self {
        Self {
            u: [1.0; S],
            thresholds: [0.0; S],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.thresholds).all(|v| v.is_finite())
    }
}

impl Default for BmhtParams {
    fn default() -> Self {
        Self::identity()
    }
}

/// Which fixed transform sandwiches the trainable stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockTransform {
    /// `Q₈` / `Q₈⁻¹`.
    Mht,
    /// Orthonormal `H₈/√8`, its own inverse.
    Hadamard,
}

/// Structural variant of the layer; the ablations switch stages off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub transform: BlockTransform,
    pub scaling: bool,
    pub thresholding: bool,
}

impl LayerSpec {
    pub const FULL: LayerSpec = LayerSpec {
        transform: BlockTransform::Mht,
        scaling: true,
        thresholding: true,
    };

    pub fn n_params(&self) -> usize {
        S * (usize::from(self.scaling) + usize::from(self.thresholding))
    }
}

impl Default for LayerSpec {
    fn default() -> Self {
        Self::FULL
    }
}

/// A real signal cut into zero-padded blocks of eight.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockView {
    pub blocks: Vec<Block>,
    pub original_length: usize,
}

impl BlockView {
    pub fn from_real(v: &[f64]) -> Self {
        let mut blocks = Vec::with_capacity(v.len().div_ceil(S));
        for chunk in v.chunks(S) {
            let mut b = [0.0; S];
            b[..chunk.len()].copy_from_slice(chunk);
            blocks.push(b);
        }
        Self {
            blocks,
            original_length: v.len(),
        }
    }

    /// Concatenate blocks and drop the padding.
    pub fn to_real(&self) -> Result<Vec<f64>> {
        if self.original_length > S * self.blocks.len() {
            return Err(Error::Shape(format!(
                "original length {} exceeds {} blocks",
                self.original_length,
                self.blocks.len()
            )));
        }
        let mut out: Vec<f64> = self.blocks.iter().flatten().copied().collect();
        out.truncate(self.original_length);
        Ok(out)
    }
}

/// `[Re y; Im y]`.
pub fn concat_re_im(y: &[Complex64]) -> Vec<f64> {
    y.iter()
        .map(|z| z.re)
        .chain(y.iter().map(|z| z.im))
        .collect()
}

/// Flatten, pad and block a complex vector.
pub fn preprocess(y: &[Complex64]) -> Result<BlockView> {
    if y.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Data("received vector has non-finite entries".into()));
    }
    Ok(BlockView::from_real(&concat_re_im(y)))
}

/// Undo [`preprocess`].
pub fn postprocess(view: &BlockView) -> Result<Vec<Complex64>> {
    if !view.original_length.is_multiple_of(2) {
        return Err(Error::Shape(format!(
            "original length {} is not a real/imaginary concatenation",
            view.original_length
        )));
    }
    let flat = view.to_real()?;
    let l = flat.len() / 2;
    Ok((0..l)
        .map(|i| Complex64::new(flat[i], flat[l + i]))
        .collect())
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    let mag = v.abs() - t;
    if mag > 0.0 {
        v.signum() * mag
    } else {
        0.0
    }
}

fn sigmoid(p: f64) -> f64 {
    1.0 / (1.0 + (-p).exp())
}

/// `KL(κ ‖ s)` for Bernoulli means.
pub fn kl_bernoulli(kappa: f64, s: f64) -> f64 {
    kappa * (kappa / s).ln() + (1.0 - kappa) * ((1.0 - kappa) / (1.0 - s)).ln()
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "sparsity target kappa must lie in (0, 1), got {kappa}"
        )))
    }
}

/// Intermediate values of one block's forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardTrace {
    pub coeffs: Block,
    pub scaled: Block,
    pub latent: Block,
    pub denoised: Block,
}

/// Partial derivatives of the block loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamGrads {
    pub u: Block,
    pub thresholds: Block,
}

impl ParamGrads {
    fn zero() -> Self {
        Self {
            u: [0.0; S],
            thresholds: [0.0; S],
        }
    }

    fn accumulate(&mut self, other: &ParamGrads) {
        for j in 0..S {
            self.u[j] += other.u[j];
            self.thresholds[j] += other.thresholds[j];
        }
    }

    fn scale(&mut self, c: f64) {
        for j in 0..S {
            self.u[j] *= c;
            self.thresholds[j] *= c;
        }
    }
}

/// The layer: fixed transform pair plus trainable parameters.
#[derive(Debug, Clone)]
pub struct BmhtLayer {
    pub params: BmhtParams,
    pub spec: LayerSpec,
    forward_m: [[f64; 8]; 8],
    inverse_m: [[f64; 8]; 8],
}

impl BmhtLayer {
    pub fn new(params: BmhtParams, spec: LayerSpec) -> Self {
        let (forward_m, inverse_m) = match spec.transform {
            BlockTransform::Mht => (*q8(), q8_inv()),
            BlockTransform::Hadamard => {
                let h = hadamard_matrix(S)
                    .and_then(|h| h.as_array8().ok_or_else(|| Error::Shape("H8".into())))
                    .expect("H8 is a valid 8x8 matrix");
                let norm = 1.0 / (S as f64).sqrt();
                let m = h.map(|row| row.map(|v| v * norm));
                (m, m)
            }
        };
        Self {
            params,
            spec,
            forward_m,
            inverse_m,
        }
    }

    pub fn mht(params: BmhtParams) -> Self {
        Self::new(params, LayerSpec::FULL)
    }

    fn effective_u(&self, j: usize) -> f64 {
        if self.spec.scaling {
            self.params.u[j]
        } else {
            1.0
        }
    }

    pub fn trace(&self, block: &Block) -> ForwardTrace {
        let coeffs = apply8(&self.forward_m, block);
        let mut scaled = [0.0; S];
        let mut latent = [0.0; S];
        for j in 0..S {
            scaled[j] = coeffs[j] * self.effective_u(j);
            latent[j] = if self.spec.thresholding {
                soft_threshold(scaled[j], self.params.thresholds[j])
            } else {
                scaled[j]
            };
        }
        let denoised = apply8(&self.inverse_m, &latent);
        ForwardTrace {
            coeffs,
            scaled,
            latent,
            denoised,
        }
    }

    /// `(denoised, latent)` for one block.
    pub fn forward(&self, block: &Block) -> (Block, Block) {
        let t = self.trace(block);
        (t.denoised, t.latent)
    }

    /// Per-block loss with reconstruction error and KL sparsity penalty.
    pub fn loss(&self, noisy: &Block, clean: &Block, kappa: f64, rho: f64) -> Result<f64> {
        check_kappa(kappa)?;
        let t = self.trace(noisy);
        Ok(block_loss(&t, clean, kappa, rho))
    }

    /// Analytic gradient of [`BmhtLayer::loss`].
    ///
    /// The soft-threshold kink and the sigmoid clamp both take subgradient 0.
    pub fn gradients(
        &self,
        noisy: &Block,
        clean: &Block,
        kappa: f64,
        rho: f64,
    ) -> Result<ParamGrads> {
        check_kappa(kappa)?;
        let t = self.trace(noisy);
        Ok(self.block_gradients(&t, clean, kappa, rho))
    }

    fn block_gradients(&self, t: &ForwardTrace, clean: &Block, kappa: f64, rho: f64) -> ParamGrads {
        let mut resid = [0.0; S];
        for i in 0..S {
            resid[i] = t.denoised[i] - clean[i];
        }
        let mut g = ParamGrads::zero();
        for j in 0..S {
            // dL/dp_j
            let mut gp: f64 = resid
                .iter()
                .zip(&self.inverse_m)
                .map(|(r, row)| r * row[j])
                .sum();
            gp *= 2.0 / S as f64;
            if rho != 0.0 {
                let s = sigmoid(t.latent[j]);
                if s > SIGMOID_FLOOR && s < 1.0 - SIGMOID_FLOOR {
                    gp += rho * (s - kappa);
                }
            }
            // dp_j/dv_j and dp_j/dT_j
            let (dv, dt) = if self.spec.thresholding {
                if t.scaled[j].abs() > self.params.thresholds[j] {
                    (1.0, -t.scaled[j].signum())
                } else {
                    (0.0, 0.0)
                }
            } else {
                (1.0, 0.0)
            };
            if self.spec.scaling {
                g.u[j] = gp * dv * t.coeffs[j];
            }
            if self.spec.thresholding {
                g.thresholds[j] = gp * dt;
            }
        }
        g
    }

    /// Denoise a flat real signal of any length.
    pub fn denoise_real(&self, v: &[f64]) -> Vec<f64> {
        let mut view = BlockView::from_real(v);
        for b in &mut view.blocks {
            *b = self.forward(b).0;
        }
        view.to_real().expect("view built from the signal itself")
    }

    /// Denoise every antenna of a frame independently.
    pub fn denoise_frame(&self, frame: &ReceivedFrame) -> Result<ReceivedFrame> {
        let mut out = frame.clone();
        for t in 0..frame.antennas() {
            let mut view = preprocess(frame.y.col(t))?;
            for b in &mut view.blocks {
                *b = self.forward(b).0;
            }
            let denoised = postprocess(&view)?;
            out.y.col_mut(t).copy_from_slice(&denoised);
        }
        Ok(out)
    }

    /// Parameter and multiply-accumulate counts for signals of `l` complex samples.
    pub fn complexity(&self, l: usize) -> ComplexityReport {
        let blocks = (2 * l).div_ceil(S);
        let scaling = if self.spec.scaling { S } else { 0 };
        let nontrivial_inverse = self
            .inverse_m
            .iter()
            .flatten()
            .filter(|&&v| v != 0.0 && v.abs() != 1.0)
            .count();
        let nontrivial_forward = self
            .forward_m
            .iter()
            .flatten()
            .filter(|&&v| v != 0.0 && v.abs() != 1.0 && v.abs() != 2.0)
            .count();
        ComplexityReport {
            n_params: self.spec.n_params(),
            macs: blocks * (scaling + S * S),
            convention: MAC_CONVENTION,
            sparse_macs: blocks * (nontrivial_forward + scaling + nontrivial_inverse),
            dense_macs: blocks * (S * S + scaling + S * S),
        }
    }
}

fn block_loss(t: &ForwardTrace, clean: &Block, kappa: f64, rho: f64) -> f64 {
    let mse = t
        .denoised
        .iter()
        .zip(clean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / S as f64;
    if rho == 0.0 {
        return mse;
    }
    let penalty: f64 = t
        .latent
        .iter()
        .map(|&p| kl_bernoulli(kappa, sigmoid(p).clamp(SIGMOID_FLOOR, 1.0 - SIGMOID_FLOOR)))
        .sum();
    mse + rho * penalty
}

/// The counting rule behind [`ComplexityReport::macs`].
pub const MAC_CONVENTION: &str = "forward transform free (entries 0, +-1, +-2 are adds/shifts); \
scaling 1 MAC per coefficient; soft threshold free (sign-bit ops); inverse transform dense, 64 MACs per block";

/// Parameter count and three MAC tallies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComplexityReport {
    pub n_params: usize,
    /// Count under [`MAC_CONVENTION`].
    pub macs: usize,
    pub convention: &'static str,
    /// Only entries outside {0, ±1} (forward: outside {0, ±1, ±2}) cost a MAC.
    pub sparse_macs: usize,
    /// Both transforms dense plus scaling.
    pub dense_macs: usize,
}

/// `(denoised, latent)` of the full MHT layer.
pub fn forward(params: &BmhtParams, block: &Block) -> (Block, Block) {
    BmhtLayer::mht(*params).forward(block)
}

pub fn loss(
    params: &BmhtParams,
    noisy: &Block,
    clean: &Block,
    kappa: f64,
    rho: f64,
) -> Result<f64> {
    BmhtLayer::mht(*params).loss(noisy, clean, kappa, rho)
}

pub fn gradients(
    params: &BmhtParams,
    noisy: &Block,
    clean: &Block,
    kappa: f64,
    rho: f64,
) -> Result<ParamGrads> {
    BmhtLayer::mht(*params).gradients(noisy, clean, kappa, rho)
}

pub fn denoise_frame(params: &BmhtParams, frame: &ReceivedFrame) -> Result<ReceivedFrame> {
    BmhtLayer::mht(*params).denoise_frame(frame)
}

/// Parameter and MAC counts of the full MHT layer for length-`l` signals.
pub fn count_params_and_macs(params: &BmhtParams, l: usize) -> ComplexityReport {
    BmhtLayer::mht(*params).complexity(l)
}

#[derive(Serialize, Deserialize)]
struct ParamFile {
    u: Vec<f64>,
    thresholds: Vec<f64>,
    s: usize,
    format_version: u32,
}

pub fn save_params(params: &BmhtParams, path: &Path) -> Result<()> {
    let doc = ParamFile {
        u: params.u.to_vec(),
        thresholds: params.thresholds.to_vec(),
        s: S,
        format_version: PARAM_FORMAT_VERSION,
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Persistence(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<BmhtParams> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Persistence(format!("{}: {e}", path.display())))?;
    let doc: ParamFile = serde_json::from_str(&text)
        .map_err(|e| Error::Persistence(format!("{}: {e}", path.display())))?;
    if doc.format_version != PARAM_FORMAT_VERSION {
        return Err(Error::Persistence(format!(
            "unsupported parameter format_version {} (expected {PARAM_FORMAT_VERSION})",
            doc.format_version
        )));
    }
    if doc.s != S {
        return Err(Error::Persistence(format!("block size {} != {S}", doc.s)));
    }
    let u: Block =
        doc.u.as_slice().try_into().map_err(|_| {
            Error::Persistence(format!("u has {} entries, expected {S}", doc.u.len()))
        })?;
    let thresholds: Block = doc.thresholds.as_slice().try_into().map_err(|_| {
        Error::Persistence(format!(
            "thresholds has {} entries, expected {S}",
            doc.thresholds.len()
        ))
    })?;
    let params = BmhtParams { u, thresholds };
    if !params.is_finite() {
        return Err(Error::Persistence("parameters must be finite".into()));
    }
    Ok(params)
}

/// Optimizer and schedule settings for [`train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub kappa: f64,
    pub rho: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Fraction of pairs held out for checkpoint selection.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 200,
            kappa: 1e-3,
            rho: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        check_kappa(self.kappa)?;
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.rho >= 0.0) {
            return Err(Error::Config(format!("rho must be >= 0, got {}", self.rho)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl AdamW {
    pub fn new(dim: usize, lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -=
                self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Percent.
    pub val_rms: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Parameters of the best epoch by validation RMS.
    pub params: BmhtParams,
    pub best_epoch: usize,
    pub curve: Vec<EpochLog>,
}

impl TrainReport {
    pub fn write_curve_csv(&self, path: &Path) -> Result<()> {
        let mut text = String::from("epoch,train_loss,val_loss,val_rms\n");
        for e in &self.curve {
            text.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.train_loss, e.val_loss, e.val_rms
            ));
        }
        fs::write(path, text)?;
        Ok(())
    }
}

struct Sample {
    noisy: Vec<Block>,
    clean: Vec<Block>,
    original: Vec<f64>,
    original_noisy: Vec<f64>,
}

fn to_samples(dataset: &DenoiseDataset) -> Vec<Sample> {
    dataset
        .pairs
        .iter()
        .map(|(noisy, clean)| Sample {
            noisy: BlockView::from_real(noisy).blocks,
            clean: BlockView::from_real(clean).blocks,
            original: clean.clone(),
            original_noisy: noisy.clone(),
        })
        .collect()
}

fn pack(params: &BmhtParams) -> Vec<f64> {
    params.u.iter().chain(&params.thresholds).copied().collect()
}

fn unpack(flat: &[f64], spec: &LayerSpec, params: &mut BmhtParams) {
    if spec.scaling {
        params.u.copy_from_slice(&flat[..S]);
    }
    if spec.thresholding {
        params.thresholds.copy_from_slice(&flat[S..]);
    }
}

fn mean_loss(layer: &BmhtLayer, samples: &[&Sample], kappa: f64, rho: f64) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for s in samples {
        for (b, c) in s.noisy.iter().zip(&s.clean) {
            total += block_loss(&layer.trace(b), c, kappa, rho);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

fn pooled_rms(layer: &BmhtLayer, samples: &[&Sample]) -> f64 {
    let mut clean = Vec::new();
    let mut denoised = Vec::new();
    for s in samples {
        clean.extend_from_slice(&s.original);
        denoised.extend(layer.denoise_real(&s.original_noisy));
    }
    metrics::rms(&clean, &denoised).unwrap_or(f64::NAN)
}

/// Train `(u, T)` on noisy/clean pairs, starting from the identity layer.
///
/// The returned parameters are those of the epoch with the lowest pooled
/// RMS on the held-out split (epoch 0 is the untrained layer).
pub fn train(dataset: &DenoiseDataset, cfg: &TrainConfig, spec: LayerSpec) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    cfg.validate()?;
    let mut rng = seeded(cfg.seed);
    let samples = to_samples(dataset);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((samples.len() as f64) * cfg.val_fraction).round() as usize;
    let n_val = n_val.min(samples.len().saturating_sub(1));
    let (val_idx, train_idx) = order.split_at(n_val);
    let val: Vec<&Sample> = val_idx.iter().map(|&i| &samples[i]).collect();
    let mut train_idx = train_idx.to_vec();
    let all_train: Vec<&Sample> = train_idx.iter().map(|&i| &samples[i]).collect();
    let select_on: &[&Sample] = if val.is_empty() { &all_train } else { &val };

    let mut layer = BmhtLayer::new(BmhtParams::identity(), spec);
    let mut flat = pack(&layer.params);
    let mut opt = AdamW::new(
        2 * S,
        cfg.learning_rate,
        cfg.beta1,
        cfg.beta2,
        cfg.eps,
        cfg.weight_decay,
    );

    let log_epoch = |epoch: usize, layer: &BmhtLayer| EpochLog {
        epoch,
        train_loss: mean_loss(layer, &all_train, cfg.kappa, cfg.rho),
        val_loss: mean_loss(layer, &val, cfg.kappa, cfg.rho),
        val_rms: pooled_rms(layer, select_on),
    };
    let mut curve = vec![log_epoch(0, &layer)];
    let mut best = (curve[0].val_rms, 0usize, layer.params);

    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut rng);
        for batch in train_idx.chunks(cfg.batch_size) {
            let mut g = ParamGrads::zero();
            let mut blocks = 0usize;
            for &i in batch {
                let s = &samples[i];
                for (b, c) in s.noisy.iter().zip(&s.clean) {
                    let t = layer.trace(b);
                    g.accumulate(&layer.block_gradients(&t, c, cfg.kappa, cfg.rho));
                    blocks += 1;
                }
            }
            g.scale(1.0 / blocks as f64);
            let grads = pack(&BmhtParams {
                u: g.u,
                thresholds: g.thresholds,
            });
            opt.step(&mut flat, &grads);
            unpack(&flat, &spec, &mut layer.params);
        }
        if !layer.params.is_finite() {
            return Err(Error::numerical(format!(
                "parameters diverged in epoch {epoch}"
            )));
        }
        let entry = log_epoch(epoch, &layer);
        if entry.val_rms < best.0 {
            best = (entry.val_rms, epoch, layer.params);
        }
        curve.push(entry);
    }
    Ok(TrainReport {
        params: best.2,
        best_epoch: best.1,
        curve,
    })
}

/// Pooled RMS and PRD (percent) of a layer over a corpus, and of the identity baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DenoiseScore {
    pub rms: f64,
    pub prd: f64,
}

pub fn evaluate(layer: &BmhtLayer, dataset: &DenoiseDataset) -> Result<DenoiseScore> {
    let mut clean = Vec::new();
    let mut denoised = Vec::new();
    for (n, c) in &dataset.pairs {
        clean.extend_from_slice(c);
        denoised.extend(layer.denoise_real(n));
    }
    Ok(DenoiseScore {
        rms: metrics::rms(&clean, &denoised)?,
        prd: metrics::prd(&clean, &denoised)?,
    })
}

//! Scenario runners and their file outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{DetectorKind, ExperimentConfig, Scenario, SignalInput, SCHEMA_VERSION};
use super::oracle::{self, OracleOutcome};
use crate::bmht::{self, BlockTransform, BmhtLayer, BmhtParams, LayerSpec, TrainConfig};
use crate::detectors::{run_blind_nsvgd, run_mcmc, run_nsvgd, run_svgd, DetectionResult};
use crate::error::{Error, Result};
use crate::metrics::{DetectionSummary, MeanSe, TrialScore};
use crate::ra_model::{
    draw_activity, draw_grouped_activity, generate_denoise_dataset, generate_preamble_pool,
    snr_to_noise_power, synthesize_frame, ActivityVector, DatasetConfig, DenoiseDataset,
    PreambleGroup,
};
use crate::rng::{derive_seed, seeded};

/// One row of `results.csv` for the detection scenarios.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionRow {
    pub scenario: String,
    pub detector: String,
    /// Particle count; 0 for the Metropolis baseline.
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "L")]
    pub l: usize,
    /// Device count, or `a-b+c-d` for the uniform ranges of `dynamic-groups`.
    #[serde(rename = "M")]
    pub m: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub snr_db: f64,
    pub trials: usize,
    pub mse_mean: f64,
    pub mse_se: f64,
    pub pade_mean: f64,
    pub pade_se: f64,
    pub throughput_mean: f64,
    pub throughput_se: f64,
    pub wall_ms_mean: f64,
    /// Trials whose detector hit a numerical error; they are scored as "no detection".
    pub failures: usize,
}

/// One row of `results.csv` for `train-denoiser` and `eval-denoiser`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenoiserRow {
    pub scenario: String,
    pub variant: String,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub snr_db: f64,
    pub pairs: usize,
    pub n_params: usize,
    pub macs: usize,
    /// Epoch of the selected checkpoint; empty for untrained variants.
    pub best_epoch: Option<usize>,
    pub rms: f64,
    pub prd: f64,
}

#[derive(Debug, Clone)]
pub enum RunResults {
    Detection(Vec<DetectionRow>),
    Denoiser(Vec<DenoiserRow>),
    Oracles(Vec<OracleOutcome>),
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub scenario: Scenario,
    pub results: RunResults,
    pub results_csv: PathBuf,
    pub manifest: PathBuf,
    pub wall_time_s: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    scenario: &'a str,
    seed: u64,
    git_describe: String,
    started_unix_s: u64,
    wall_time_s: f64,
    outputs: Vec<String>,
    config: &'a ExperimentConfig,
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Persistence(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Persistence(format!("{}: {e}", path.display())))?;
    }
    w.flush()?;
    Ok(())
}

/// Detector, particle count and input for one column of a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorChoice {
    pub kind: DetectorKind,
    pub n: usize,
    pub input: SignalInput,
}

/// How the per-trial activity vector is drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum ActivityLaw {
    Fixed(usize),
    /// Two preamble groups with device counts drawn uniformly from inclusive ranges.
    Groups {
        sensitive_preambles: usize,
        sensitive: (usize, usize),
        tolerant: (usize, usize),
    },
}

impl ActivityLaw {
    fn label(&self) -> String {
        match self {
            ActivityLaw::Fixed(m) => m.to_string(),
            ActivityLaw::Groups {
                sensitive,
                tolerant,
                ..
            } => {
                format!(
                    "{}-{}+{}-{}",
                    sensitive.0, sensitive.1, tolerant.0, tolerant.1
                )
            }
        }
    }

    fn draw<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<ActivityVector> {
        match self {
            ActivityLaw::Fixed(m) => draw_activity(*m, k, rng),
            ActivityLaw::Groups {
                sensitive_preambles,
                sensitive,
                tolerant,
            } => {
                let groups = [
                    PreambleGroup {
                        first: 0,
                        size: *sensitive_preambles,
                        devices: rng.random_range(sensitive.0..=sensitive.1),
                    },
                    PreambleGroup {
                        first: *sensitive_preambles,
                        size: k - sensitive_preambles,
                        devices: rng.random_range(tolerant.0..=tolerant.1),
                    },
                ];
                draw_grouped_activity(k, &groups, rng)
            }
        }
    }
}

/// Coordinates of one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub k: usize,
    pub l: usize,
    pub t: usize,
    pub snr_db: f64,
    pub activity: ActivityLaw,
}

fn detector_code(kind: DetectorKind) -> u64 {
    match kind {
        DetectorKind::Mcmc => 0,
        DetectorKind::Svgd => 1,
        DetectorKind::Nsvgd => 2,
        DetectorKind::Blind => 3,
    }
}

struct TrialOutcome {
    score: TrialScore,
    wall_ms: f64,
    failed: bool,
}

/// Run one detector on one trial.
///
/// The frame depends only on `(seed, trial)`, so every detector and every SNR
/// point of a sweep sees the same preambles, activity, fading and noise shape.
fn run_trial(
    cfg: &ExperimentConfig,
    point: &GridPoint,
    choice: DetectorChoice,
    layer: Option<&BmhtLayer>,
    trial: usize,
) -> Result<TrialOutcome> {
    let beta = cfg.model.beta;
    let mut rng = seeded(derive_seed(cfg.seed, &[trial as u64]));
    let pool = generate_preamble_pool(point.k, point.l, &mut rng)?;
    let act = point.activity.draw(point.k, &mut rng)?;
    let delta = snr_to_noise_power(point.snr_db, beta);
    let raw = synthesize_frame(&pool, &act, beta, point.t, delta, &mut rng)?;
    let frame = match choice.input {
        SignalInput::Raw => raw,
        SignalInput::Denoised => layer
            .ok_or_else(|| {
                Error::Config("denoiser.params: denoised input requested without a layer".into())
            })?
            .denoise_frame(&raw)?,
    };
    let mut det_cfg = cfg.detector.clone();
    det_cfg.beta = beta;
    det_cfg.particles = choice.n.max(1);
    let mut drng = seeded(derive_seed(
        cfg.seed,
        &[trial as u64, detector_code(choice.kind), choice.n as u64],
    ));
    let res: Result<DetectionResult> = match choice.kind {
        DetectorKind::Mcmc => {
            let mut mc = cfg.mcmc.clone();
            mc.beta = beta;
            run_mcmc(&frame, &pool, &mc, delta, &mut drng)
        }
        DetectorKind::Svgd => run_svgd(&frame, &pool, &det_cfg, &mut drng),
        DetectorKind::Nsvgd => run_nsvgd(&frame, &pool, &det_cfg, act.devices(), &mut drng),
        DetectorKind::Blind => run_blind_nsvgd(&frame, &pool, &det_cfg, &mut drng),
    };
    match res {
        Ok(r) => Ok(TrialOutcome {
            score: TrialScore::new(&act.counts, &r.estimate)?,
            wall_ms: r.wall_time.as_secs_f64() * 1e3,
            failed: false,
        }),
        Err(Error::Numerical { .. }) => Ok(TrialOutcome {
            score: TrialScore::new(&act.counts, &vec![0; point.k])?,
            wall_ms: 0.0,
            failed: true,
        }),
        Err(e) => Err(e),
    }
}

/// Evaluate one grid point over `cfg.trials` trials (in parallel, reduced in trial order).
pub fn run_point(
    scenario: Scenario,
    cfg: &ExperimentConfig,
    point: &GridPoint,
    choice: DetectorChoice,
    layer: Option<&BmhtLayer>,
) -> Result<DetectionRow> {
    let outcomes: Vec<TrialOutcome> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| run_trial(cfg, point, choice, layer, trial))
        .collect::<Result<_>>()?;
    let scores: Vec<TrialScore> = outcomes.iter().map(|o| o.score).collect();
    let summary = DetectionSummary::from_trials(&scores)?;
    let ok: Vec<f64> = outcomes
        .iter()
        .filter(|o| !o.failed)
        .map(|o| o.wall_ms)
        .collect();
    let wall = if ok.is_empty() {
        f64::NAN
    } else {
        MeanSe::of(&ok)?.mean
    };
    Ok(DetectionRow {
        scenario: scenario.name().into(),
        detector: choice.kind.name().into(),
        n: if choice.kind.uses_particles() {
            choice.n
        } else {
            0
        },
        k: point.k,
        l: point.l,
        m: point.activity.label(),
        t: point.t,
        snr_db: point.snr_db,
        trials: summary.trials,
        mse_mean: summary.mse.mean,
        mse_se: summary.mse.se,
        pade_mean: summary.p_ade.mean,
        pade_se: summary.p_ade.se,
        throughput_mean: summary.throughput.mean,
        throughput_se: summary.throughput.se,
        wall_ms_mean: wall,
        failures: outcomes.iter().filter(|o| o.failed).count(),
    })
}

fn choices(cfg: &ExperimentConfig, particles: &[usize]) -> Vec<DetectorChoice> {
    let mut out = Vec::new();
    for &kind in &cfg.sweep.detectors {
        let input = if kind == DetectorKind::Blind {
            cfg.sweep.blind_input
        } else {
            cfg.sweep.baseline_input
        };
        if kind.uses_particles() {
            out.extend(particles.iter().map(|&n| DetectorChoice { kind, n, input }));
        } else {
            out.push(DetectorChoice { kind, n: 0, input });
        }
    }
    out
}

/// Load the denoiser named by `denoiser.params`.
pub fn load_layer(cfg: &ExperimentConfig) -> Result<BmhtLayer> {
    let path = cfg.denoiser.params.as_ref().ok_or_else(|| {
        Error::Config("denoiser.params: a trained parameter file is required".into())
    })?;
    Ok(BmhtLayer::mht(bmht::load_params(path)?))
}

fn point(cfg: &ExperimentConfig, snr_db: f64, activity: ActivityLaw) -> GridPoint {
    GridPoint {
        k: cfg.model.k,
        l: cfg.model.l,
        t: cfg.model.antennas,
        snr_db,
        activity,
    }
}

/// The grid of a detection scenario, in output order.
pub fn detection_grid(
    scenario: Scenario,
    cfg: &ExperimentConfig,
) -> Vec<(GridPoint, DetectorChoice)> {
    let m = &cfg.model;
    let single = [cfg.detector.particles];
    let mut grid = Vec::new();
    match scenario {
        Scenario::DetectOnce => {
            for c in choices(cfg, &single) {
                grid.push((point(cfg, m.snr_db, ActivityLaw::Fixed(m.m)), c));
            }
        }
        Scenario::SweepSnr | Scenario::Throughput => {
            let particles: &[usize] = if scenario == Scenario::SweepSnr {
                &cfg.sweep.particles
            } else {
                &single
            };
            for c in choices(cfg, particles) {
                for &snr in &cfg.sweep.snr_db {
                    grid.push((point(cfg, snr, ActivityLaw::Fixed(m.m)), c));
                }
            }
        }
        Scenario::SweepM => {
            for c in choices(cfg, &cfg.sweep.particles) {
                for &mm in &cfg.sweep.m {
                    grid.push((point(cfg, m.snr_db, ActivityLaw::Fixed(mm)), c));
                }
            }
        }
        Scenario::DynamicGroups => {
            let g = &cfg.groups;
            let law = ActivityLaw::Groups {
                sensitive_preambles: g.sensitive_preambles,
                sensitive: (g.sensitive_min, g.sensitive_max),
                tolerant: (g.tolerant_min, g.tolerant_max),
            };
            for c in choices(cfg, &single) {
                for &snr in &cfg.sweep.snr_db {
                    grid.push((point(cfg, snr, law.clone()), c));
                }
            }
        }
        Scenario::BenchTime => {
            let pt = GridPoint {
                t: cfg.bench.antennas,
                ..point(cfg, m.snr_db, ActivityLaw::Fixed(m.m))
            };
            let c = DetectorChoice {
                kind: DetectorKind::Blind,
                n: cfg.bench.particles,
                input: cfg.sweep.blind_input,
            };
            grid.push((pt, c));
        }
        _ => {}
    }
    grid
}

fn run_detection(scenario: Scenario, cfg: &ExperimentConfig) -> Result<Vec<DetectionRow>> {
    let needs_layer = cfg.sweep.blind_input == SignalInput::Denoised
        || cfg.sweep.baseline_input == SignalInput::Denoised;
    let layer = if needs_layer {
        Some(load_layer(cfg)?)
    } else {
        None
    };
    let mut cfg = cfg.clone();
    if scenario == Scenario::BenchTime {
        cfg.trials = cfg.bench.runs;
    }
    detection_grid(scenario, &cfg)
        .iter()
        .map(|(pt, c)| run_point(scenario, &cfg, pt, *c, layer.as_ref()))
        .collect()
}

/// Training and test corpora of the denoiser scenarios.
pub fn denoiser_corpora(cfg: &ExperimentConfig) -> Result<(DenoiseDataset, DenoiseDataset)> {
    let d = &cfg.denoiser;
    let m = &cfg.model;
    let mut train_cfg =
        DatasetConfig::new(m.k, m.l, m.m, d.train_snr_db, d.train_pairs, d.train_seed);
    train_cfg.beta = m.beta;
    let mut test_cfg = DatasetConfig::new(m.k, m.l, m.m, d.test_snr_db, d.test_pairs, d.test_seed);
    test_cfg.beta = m.beta;
    Ok((
        generate_denoise_dataset(&train_cfg)?,
        generate_denoise_dataset(&test_cfg)?,
    ))
}

/// The ablation variants: name, layer structure and training settings.
pub fn ablation_variants(base: &TrainConfig) -> Vec<(&'static str, LayerSpec, TrainConfig)> {
    vec![
        (
            "no-scaling",
            LayerSpec {
                scaling: false,
                ..LayerSpec::FULL
            },
            base.clone(),
        ),
        (
            "no-threshold",
            LayerSpec {
                thresholding: false,
                ..LayerSpec::FULL
            },
            TrainConfig {
                rho: 0.0,
                ..base.clone()
            },
        ),
        (
            "hadamard",
            LayerSpec {
                transform: BlockTransform::Hadamard,
                ..LayerSpec::FULL
            },
            base.clone(),
        ),
    ]
}

fn denoiser_row(
    scenario: Scenario,
    cfg: &ExperimentConfig,
    variant: &str,
    layer: &BmhtLayer,
    best_epoch: Option<usize>,
    test: &DenoiseDataset,
) -> Result<DenoiserRow> {
    let score = bmht::evaluate(layer, test)?;
    let cx = layer.complexity(cfg.model.l);
    Ok(DenoiserRow {
        scenario: scenario.name().into(),
        variant: variant.into(),
        k: cfg.model.k,
        l: cfg.model.l,
        m: cfg.model.m,
        snr_db: cfg.denoiser.test_snr_db,
        pairs: test.len(),
        n_params: cx.n_params,
        macs: cx.macs,
        best_epoch,
        rms: score.rms,
        prd: score.prd,
    })
}

fn run_train_denoiser(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    outputs: &mut Vec<String>,
) -> Result<Vec<DenoiserRow>> {
    let sc = Scenario::TrainDenoiser;
    let (train_set, test_set) = denoiser_corpora(cfg)?;
    let report = bmht::train(&train_set, &cfg.denoiser.train, LayerSpec::FULL)?;
    let params_path = out_dir.join("bmht_params.json");
    bmht::save_params(&report.params, &params_path)?;
    report.write_curve_csv(&out_dir.join("training_curve.csv"))?;
    outputs.extend([
        "bmht_params.json".to_string(),
        "training_curve.csv".to_string(),
    ]);
    let mut rows = vec![
        denoiser_row(
            sc,
            cfg,
            "identity",
            &BmhtLayer::mht(BmhtParams::identity()),
            None,
            &test_set,
        )?,
        denoiser_row(
            sc,
            cfg,
            "full",
            &BmhtLayer::mht(report.params),
            Some(report.best_epoch),
            &test_set,
        )?,
    ];
    if cfg.denoiser.ablations {
        for (name, spec, tc) in ablation_variants(&cfg.denoiser.train) {
            let r = bmht::train(&train_set, &tc, spec)?;
            rows.push(denoiser_row(
                sc,
                cfg,
                name,
                &BmhtLayer::new(r.params, spec),
                Some(r.best_epoch),
                &test_set,
            )?);
        }
    }
    Ok(rows)
}

fn run_eval_denoiser(cfg: &ExperimentConfig) -> Result<Vec<DenoiserRow>> {
    let sc = Scenario::EvalDenoiser;
    let layer = load_layer(cfg)?;
    let (_, test_set) = denoiser_corpora(cfg)?;
    Ok(vec![
        denoiser_row(
            sc,
            cfg,
            "identity",
            &BmhtLayer::mht(BmhtParams::identity()),
            None,
            &test_set,
        )?,
        denoiser_row(sc, cfg, "full", &layer, None, &test_set)?,
    ])
}

fn run_oracles(cfg: &ExperimentConfig) -> Result<Vec<OracleOutcome>> {
    let mut det = cfg.detector.clone();
    det.beta = cfg.model.beta;
    let o = &cfg.oracle;
    oracle::run_all(
        o.fd_instances,
        o.covariance_frames,
        o.mle_seeds,
        cfg.seed,
        None,
        &det,
    )
}

/// Run a scenario and write `results.csv` and `manifest.json` (plus scenario
/// extras) into `out_dir`.
///
/// Failed oracle checks are reported as an error after the files are written.
pub fn run(scenario: Scenario, cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate(scenario)?;
    fs::create_dir_all(out_dir)?;
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let clock = Instant::now();
    let mut outputs = vec!["results.csv".to_string(), "manifest.json".to_string()];
    let results_csv = out_dir.join("results.csv");
    let results = match scenario {
        Scenario::TrainDenoiser => {
            let rows = run_train_denoiser(cfg, out_dir, &mut outputs)?;
            write_csv(&results_csv, &rows)?;
            RunResults::Denoiser(rows)
        }
        Scenario::EvalDenoiser => {
            let rows = run_eval_denoiser(cfg)?;
            write_csv(&results_csv, &rows)?;
            RunResults::Denoiser(rows)
        }
        Scenario::OracleChecks => {
            let rows = run_oracles(cfg)?;
            write_csv(&results_csv, &rows)?;
            RunResults::Oracles(rows)
        }
        _ => {
            let rows = run_detection(scenario, cfg)?;
            write_csv(&results_csv, &rows)?;
            RunResults::Detection(rows)
        }
    };
    let wall_time_s = clock.elapsed().as_secs_f64();
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        scenario: scenario.name(),
        seed: cfg.seed,
        git_describe: git_describe(),
        started_unix_s: started,
        wall_time_s,
        outputs,
        config: cfg,
    };
    let manifest_path = out_dir.join("manifest.json");
    let text =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Persistence(e.to_string()))?;
    fs::write(&manifest_path, text)?;
    if let RunResults::Oracles(rows) = &results {
        let failed: Vec<String> = rows
            .iter()
            .filter(|r| !r.passed)
            .map(|r| {
                format!(
                    "{} (observed {}, threshold {})",
                    r.name, r.observed, r.threshold
                )
            })
            .collect();
        if !failed.is_empty() {
            return Err(Error::Numerical {
                iteration: None,
                message: format!("oracle checks failed: {}", failed.join("; ")),
            });
        }
    }
    Ok(RunSummary {
        scenario,
        results,
        results_csv,
        manifest: manifest_path,
        wall_time_s,
    })
}

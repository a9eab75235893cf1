//! Experiment configuration: a TOML file with dotted keys plus `key=value` overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bmht::TrainConfig;
use crate::detectors::{DetectorConfig, McmcConfig};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    TrainDenoiser,
    EvalDenoiser,
    DetectOnce,
    SweepSnr,
    SweepM,
    Throughput,
    DynamicGroups,
    BenchTime,
    OracleChecks,
}

impl Scenario {
    pub const ALL: [Scenario; 9] = [
        Scenario::TrainDenoiser,
        Scenario::EvalDenoiser,
        Scenario::DetectOnce,
        Scenario::SweepSnr,
        Scenario::SweepM,
        Scenario::Throughput,
        Scenario::DynamicGroups,
        Scenario::BenchTime,
        Scenario::OracleChecks,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::TrainDenoiser => "train-denoiser",
            Scenario::EvalDenoiser => "eval-denoiser",
            Scenario::DetectOnce => "detect-once",
            Scenario::SweepSnr => "sweep-snr",
            Scenario::SweepM => "sweep-m",
            Scenario::Throughput => "throughput",
            Scenario::DynamicGroups => "dynamic-groups",
            Scenario::BenchTime => "bench-time",
            Scenario::OracleChecks => "oracle-checks",
        }
    }

    /// Scenarios that run detectors on a denoised signal and so need trained parameters.
    pub fn needs_denoiser(self) -> bool {
        matches!(
            self,
            Scenario::DetectOnce
                | Scenario::SweepSnr
                | Scenario::SweepM
                | Scenario::Throughput
                | Scenario::DynamicGroups
                | Scenario::BenchTime
                | Scenario::EvalDenoiser
        )
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    Mcmc,
    Svgd,
    Nsvgd,
    Blind,
}

impl DetectorKind {
    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Mcmc => "mcmc",
            DetectorKind::Svgd => "svgd",
            DetectorKind::Nsvgd => "nsvgd",
            DetectorKind::Blind => "blind",
        }
    }

    /// Whether the detector runs a particle set whose size is swept.
    pub fn uses_particles(self) -> bool {
        self != DetectorKind::Mcmc
    }
}

/// Which version of the received signal a detector consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalInput {
    Raw,
    Denoised,
}

/// `y = Z v + n` dimensions and power settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Number of preambles `K`.
    pub k: usize,
    /// Preamble length `L`.
    pub l: usize,
    /// Active devices `M`.
    pub m: usize,
    /// Antennas `T`.
    pub antennas: usize,
    pub snr_db: f64,
    pub beta: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            k: 20,
            l: 10,
            m: 20,
            antennas: 35,
            snr_db: 8.0,
            beta: 1.0,
        }
    }
}

/// Grid axes and detector selection for the sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub snr_db: Vec<f64>,
    pub m: Vec<usize>,
    pub particles: Vec<usize>,
    pub detectors: Vec<DetectorKind>,
    /// Input of the blind detector.
    pub blind_input: SignalInput,
    /// Input of the MCMC, SVGD and NSVGD detectors.
    pub baseline_input: SignalInput,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            snr_db: vec![6.0, 8.0, 10.0, 12.0, 14.0, 16.0],
            m: vec![5, 10, 15, 20],
            particles: vec![3, 6],
            detectors: vec![
                DetectorKind::Mcmc,
                DetectorKind::Svgd,
                DetectorKind::Nsvgd,
                DetectorKind::Blind,
            ],
            blind_input: SignalInput::Denoised,
            baseline_input: SignalInput::Raw,
        }
    }
}

/// Training corpus, test corpus and parameter file of the denoiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSection {
    /// Trained parameters used by detection scenarios and `eval-denoiser`.
    pub params: Option<PathBuf>,
    pub train_pairs: usize,
    pub train_snr_db: f64,
    pub train_seed: u64,
    pub test_pairs: usize,
    pub test_snr_db: f64,
    pub test_seed: u64,
    /// Also train the ablation variants in `train-denoiser`.
    pub ablations: bool,
    pub train: TrainConfig,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        Self {
            params: None,
            train_pairs: 1750,
            train_snr_db: 10.0,
            train_seed: 1,
            test_pairs: 2000,
            test_snr_db: 6.0,
            test_seed: 2,
            ablations: true,
            train: TrainConfig::default(),
        }
    }
}

/// Delay-sensitive / delay-tolerant split for `dynamic-groups`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupSection {
    /// The first `sensitive_preambles` preambles are reserved for delay-sensitive devices.
    pub sensitive_preambles: usize,
    pub sensitive_min: usize,
    pub sensitive_max: usize,
    pub tolerant_min: usize,
    pub tolerant_max: usize,
}

impl Default for GroupSection {
    fn default() -> Self {
        Self {
            sensitive_preambles: 10,
            sensitive_min: 3,
            sensitive_max: 7,
            tolerant_min: 8,
            tolerant_max: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub runs: usize,
    pub antennas: usize,
    pub particles: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            runs: 5,
            antennas: 1,
            particles: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    /// Seeds for the exhaustive-search comparison.
    pub mle_seeds: usize,
    /// Random instances for the finite-difference checks.
    pub fd_instances: usize,
    /// Frames for the covariance check.
    pub covariance_frames: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            mle_seeds: 100,
            fd_instances: 50,
            covariance_frames: 10_000,
        }
    }
}

/// Everything a run needs, apart from the scenario and output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub trials: usize,
    pub model: ModelSection,
    pub sweep: SweepSection,
    pub detector: DetectorConfig,
    pub mcmc: McmcConfig,
    pub denoiser: DenoiserSection,
    pub groups: GroupSection,
    pub bench: BenchSection,
    pub oracle: OracleSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 2024,
            trials: 200,
            model: ModelSection::default(),
            sweep: SweepSection::default(),
            detector: DetectorConfig::default(),
            mcmc: McmcConfig::default(),
            denoiser: DenoiserSection::default(),
            groups: GroupSection::default(),
            bench: BenchSection::default(),
            oracle: OracleSection::default(),
        }
    }
}

fn merge(dst: &mut toml::Table, src: toml::Table) {
    for (k, v) in src {
        match (dst.get_mut(&k), v) {
            (Some(toml::Value::Table(d)), toml::Value::Table(s)) => merge(d, s),
            (_, v) => {
                dst.insert(k, v);
            }
        }
    }
}

/// Parse one `key=value` override into a nested table.
///
/// The value is read as a TOML value; anything that does not parse is taken
/// as a bare string.
pub fn parse_override(spec: &str) -> Result<toml::Table> {
    let (key, value) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not of the form key=value")))?;
    let key = key.trim();
    let value = value.trim();
    if key.is_empty()
        || !key
            .split('.')
            .all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
    {
        return Err(Error::Config(format!(
            "override key {key:?} is not a dotted identifier"
        )));
    }
    toml::from_str::<toml::Table>(&format!("{key} = {value}"))
        .or_else(|_| {
            let quoted = toml::Value::String(value.to_string()).to_string();
            toml::from_str::<toml::Table>(&format!("{key} = {quoted}"))
        })
        .map_err(|e| Error::Config(format!("override {spec:?}: {e}")))
}

impl ExperimentConfig {
    /// Load an optional config file and apply overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            merge(&mut table, parse_override(o)?);
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string().trim().to_string()))?;
        if let (Some(dir), Some(params)) =
            (path.and_then(Path::parent), cfg.denoiser.params.as_ref())
        {
            if params.is_relative() && !params.exists() && dir.join(params).exists() {
                let mut cfg = cfg.clone();
                cfg.denoiser.params = Some(dir.join(params));
                return Ok(cfg);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Schema checks that do not depend on the scenario.
    pub fn validate(&self, scenario: Scenario) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("{field}: {why}")));
        if self.schema_version != SCHEMA_VERSION {
            return bad(
                "schema_version",
                &format!("unsupported version {}", self.schema_version),
            );
        }
        if self.trials == 0 {
            return bad("trials", "must be >= 1");
        }
        let m = &self.model;
        if m.k == 0 || m.l == 0 {
            return bad("model.k", "K and L must be >= 1");
        }
        if m.antennas == 0 {
            return bad("model.antennas", "must be >= 1");
        }
        if !(m.beta > 0.0) {
            return bad("model.beta", "must be > 0");
        }
        if !m.snr_db.is_finite() {
            return bad("model.snr_db", "must be finite");
        }
        let s = &self.sweep;
        if s.detectors.is_empty() {
            return bad("sweep.detectors", "must name at least one detector");
        }
        if s.particles.is_empty() || s.particles.contains(&0) {
            return bad("sweep.particles", "must be nonempty with entries >= 1");
        }
        match scenario {
            Scenario::SweepSnr | Scenario::Throughput | Scenario::DynamicGroups
                if s.snr_db.is_empty() =>
            {
                return bad("sweep.snr_db", "must be nonempty");
            }
            Scenario::SweepM if s.m.is_empty() => return bad("sweep.m", "must be nonempty"),
            _ => {}
        }
        if scenario == Scenario::DynamicGroups {
            let g = &self.groups;
            if g.sensitive_preambles == 0 || g.sensitive_preambles >= m.k {
                return bad("groups.sensitive_preambles", "must lie in [1, K)");
            }
            if g.sensitive_min > g.sensitive_max || g.tolerant_min > g.tolerant_max {
                return bad("groups", "device ranges must satisfy min <= max");
            }
        }
        if scenario == Scenario::BenchTime
            && (self.bench.runs == 0 || self.bench.antennas == 0 || self.bench.particles == 0)
        {
            return bad("bench", "runs, antennas and particles must be >= 1");
        }
        self.detector.validate()?;
        if s.detectors.contains(&DetectorKind::Mcmc) {
            self.mcmc.validate()?;
        }
        if scenario.needs_denoiser() {
            match &self.denoiser.params {
                None => {
                    return bad(
                        "denoiser.params",
                        "a trained parameter file is required for this scenario",
                    )
                }
                Some(p) if !p.exists() => {
                    return bad(
                        "denoiser.params",
                        &format!("{} does not exist", p.display()),
                    );
                }
                _ => {}
            }
        }
        if scenario == Scenario::TrainDenoiser
            && (self.denoiser.train_pairs == 0 || self.denoiser.test_pairs == 0)
        {
            return bad("denoiser.train_pairs", "corpus sizes must be >= 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "seed = 5\nmodel.k = 30\ndetector.step_size = 0.02\nsweep.detectors = [\"blind\", \"svgd\"]\n",
        )
        .unwrap();
        let cfg = ExperimentConfig::load(
            Some(&path),
            &[
                "model.k=12".into(),
                "trials=7".into(),
                "sweep.blind_input=raw".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.model.k, 12);
        assert_eq!(cfg.model.l, 10);
        assert_eq!(cfg.trials, 7);
        assert_eq!(cfg.detector.step_size, 0.02);
        assert_eq!(
            cfg.sweep.detectors,
            vec![DetectorKind::Blind, DetectorKind::Svgd]
        );
        assert_eq!(cfg.sweep.blind_input, SignalInput::Raw);
    }

    #[test]
    fn unknown_fields_are_named() {
        let err = ExperimentConfig::load(None, &["model.kk=3".into()])
            .unwrap_err()
            .to_string();
        assert!(err.contains("kk"), "{err}");
        let err = ExperimentConfig::load(None, &["nonsense".into()]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn validation_errors_name_the_field() {
        let cfg = ExperimentConfig {
            trials: 0,
            ..ExperimentConfig::default()
        };
        assert!(cfg
            .validate(Scenario::OracleChecks)
            .unwrap_err()
            .to_string()
            .contains("trials"));
        let cfg = ExperimentConfig::default();
        let msg = cfg.validate(Scenario::SweepSnr).unwrap_err().to_string();
        assert!(msg.contains("denoiser.params"), "{msg}");
        assert!(cfg.validate(Scenario::OracleChecks).is_ok());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn scenario_names() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        assert!("nope".parse::<Scenario>().is_err());
    }
}

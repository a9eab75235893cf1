//! Experiment harness: configuration, scenario runners and numerical checks.

pub mod config;
pub mod oracle;
pub mod run;

pub use config::{DetectorKind, ExperimentConfig, Scenario, SignalInput, SCHEMA_VERSION};
pub use oracle::OracleOutcome;
pub use run::{run, DenoiserRow, DetectionRow, RunResults, RunSummary};

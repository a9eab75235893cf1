//! `ralab`: command-line front end for the experiment scenarios.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ralab_core::harness::{run, ExperimentConfig, RunResults, Scenario};
use ralab_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "ralab",
    version,
    about = "Preamble-collision detection experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML config file; dotted keys are allowed.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for results.csv and manifest.json.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// `key=value` override applied after the config file, e.g. `model.snr_db=10`.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Train the block MHT denoiser (and its ablations) and write its parameters.
    TrainDenoiser,
    /// Evaluate a trained denoiser against the identity baseline.
    EvalDenoiser,
    /// One grid point for every configured detector.
    DetectOnce,
    /// Detection metrics over the SNR axis.
    SweepSnr,
    /// Detection metrics over the device-count axis.
    SweepM,
    /// Throughput over the SNR axis.
    Throughput,
    /// Two preamble groups with random device counts.
    DynamicGroups,
    /// Wall-clock time of single blind NSVGD runs.
    BenchTime,
    /// Numerical self-checks on tiny instances.
    OracleChecks,
}

impl Command {
    fn scenario(self) -> Scenario {
        match self {
            Command::TrainDenoiser => Scenario::TrainDenoiser,
            Command::EvalDenoiser => Scenario::EvalDenoiser,
            Command::DetectOnce => Scenario::DetectOnce,
            Command::SweepSnr => Scenario::SweepSnr,
            Command::SweepM => Scenario::SweepM,
            Command::Throughput => Scenario::Throughput,
            Command::DynamicGroups => Scenario::DynamicGroups,
            Command::BenchTime => Scenario::BenchTime,
            Command::OracleChecks => Scenario::OracleChecks,
        }
    }
}

fn print_results(results: &RunResults) {
    match results {
        RunResults::Detection(rows) => {
            println!(
                "{:<8} {:>3} {:>8} {:>6} {:>10} {:>8} {:>10} {:>9} {:>4}",
                "detector", "n", "M", "snr_db", "mse", "p_ade", "throughput", "wall_ms", "fail"
            );
            for r in rows {
                println!(
                    "{:<8} {:>3} {:>8} {:>6} {:>10.4} {:>8.4} {:>10.3} {:>9.2} {:>4}",
                    r.detector,
                    r.n,
                    r.m,
                    r.snr_db,
                    r.mse_mean,
                    r.pade_mean,
                    r.throughput_mean,
                    r.wall_ms_mean,
                    r.failures
                );
            }
        }
        RunResults::Denoiser(rows) => {
            println!(
                "{:<13} {:>8} {:>8} {:>8} {:>6}",
                "variant", "rms_%", "prd_%", "params", "macs"
            );
            for r in rows {
                println!(
                    "{:<13} {:>8.3} {:>8.3} {:>8} {:>6}",
                    r.variant, r.rms, r.prd, r.n_params, r.macs
                );
            }
        }
        RunResults::Oracles(rows) => {
            for r in rows {
                let tag = if r.passed { "PASS" } else { "FAIL" };
                println!(
                    "{tag} {:<34} observed {:.3e} (threshold {:.1e})",
                    r.name, r.observed, r.threshold
                );
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let scenario = cli.command.scenario();
    let result =
        ExperimentConfig::load(cli.config.as_deref(), &cli.overrides).and_then(|mut cfg| {
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            run(scenario, &cfg, &cli.out)
        });
    match result {
        Ok(summary) => {
            print_results(&summary.results);
            println!(
                "{} finished in {:.1} s; wrote {}",
                scenario,
                summary.wall_time_s,
                summary.results_csv.display()
            );
            ExitCode::SUCCESS
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("ralab {scenario}: invalid configuration: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("ralab {scenario}: {e}");
            ExitCode::FAILURE
        }
    }
}

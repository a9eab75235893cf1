//! End-to-end runs of the scenarios on tiny configurations.

use std::path::{Path, PathBuf};

use ralab_core::bmht::{save_params, BmhtParams};
use ralab_core::harness::{run, ExperimentConfig, RunResults, Scenario};
use ralab_core::Error;

fn tiny(params: Option<PathBuf>) -> ExperimentConfig {
    let overrides: Vec<String> = [
        "trials=3",
        "model.k=8",
        "model.l=6",
        "model.m=5",
        "model.antennas=6",
        "sweep.snr_db=[8.0, 12.0]",
        "sweep.m=[2, 5]",
        "sweep.particles=[2]",
        "detector.iterations=30",
        "detector.particles=2",
        "mcmc.steps=200",
        "mcmc.burn_in=50",
        "groups.sensitive_preambles=4",
        "groups.sensitive_min=1",
        "groups.sensitive_max=3",
        "groups.tolerant_min=2",
        "groups.tolerant_max=4",
        "denoiser.train_pairs=60",
        "denoiser.test_pairs=40",
        "denoiser.train.epochs=3",
        "denoiser.train.batch_size=16",
        "oracle.mle_seeds=4",
        "oracle.fd_instances=3",
        "oracle.covariance_frames=3000",
        "bench.runs=2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut cfg = ExperimentConfig::load(None, &overrides).unwrap();
    cfg.denoiser.params = params;
    cfg
}

fn identity_params(dir: &Path) -> PathBuf {
    let p = dir.join("identity.json");
    save_params(&BmhtParams::identity(), &p).unwrap();
    p
}

/// CSV text with the wall-clock column blanked.
fn without_timing(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let wall = header.iter().position(|h| *h == "wall_ms_mean");
    let mut out = header.join(",");
    for line in lines {
        let mut cells: Vec<&str> = line.split(',').collect();
        if let Some(w) = wall {
            cells[w] = "";
        }
        out.push('\n');
        out.push_str(&cells.join(","));
    }
    out
}

#[test]
fn detection_scenarios_write_full_grids() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(Some(identity_params(dir.path())));
    let expected = [
        (Scenario::DetectOnce, 4),
        (Scenario::SweepSnr, 2 + 2 * 3),
        (Scenario::SweepM, 2 + 2 * 3),
        (Scenario::Throughput, 2 + 2 * 3),
        (Scenario::DynamicGroups, 2 + 2 * 3),
        (Scenario::BenchTime, 1),
    ];
    for (sc, rows) in expected {
        let out = dir.path().join(sc.name());
        let summary = run(sc, &cfg, &out).unwrap();
        let RunResults::Detection(r) = &summary.results else {
            panic!("{sc} should produce detection rows")
        };
        assert_eq!(r.len(), rows, "{sc}");
        for row in r {
            assert_eq!(row.scenario, sc.name());
            assert!((0.0..=1.0).contains(&row.pade_mean));
            assert!(row.failures <= row.trials);
        }
        let text = std::fs::read_to_string(out.join("results.csv")).unwrap();
        assert!(text.starts_with(
            "scenario,detector,n,K,L,M,T,snr_db,trials,mse_mean,mse_se,pade_mean,pade_se,\
throughput_mean,throughput_se,wall_ms_mean,failures"
        ));
        assert_eq!(text.lines().count(), rows + 1);
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["scenario"], sc.name());
        assert_eq!(manifest["schema_version"], 1);
        assert_eq!(manifest["seed"], cfg.seed);
        assert!(manifest["git_describe"].is_string());
        assert_eq!(manifest["config"]["model"]["k"], 8);
    }
}

#[test]
fn bench_time_uses_its_own_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(Some(identity_params(dir.path())));
    let s = run(Scenario::BenchTime, &cfg, &dir.path().join("b")).unwrap();
    let RunResults::Detection(rows) = s.results else {
        panic!()
    };
    assert_eq!(rows[0].detector, "blind");
    assert_eq!(rows[0].t, 1);
    assert_eq!(rows[0].n, 3);
    assert_eq!(rows[0].trials, 2);
}

#[test]
fn reruns_reproduce_data_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(Some(identity_params(dir.path())));
    let a = run(Scenario::SweepSnr, &cfg, &dir.path().join("a")).unwrap();
    let b = run(Scenario::SweepSnr, &cfg, &dir.path().join("b")).unwrap();
    assert_eq!(
        without_timing(&a.results_csv),
        without_timing(&b.results_csv)
    );

    let mut other = cfg.clone();
    other.seed += 1;
    let c = run(Scenario::SweepSnr, &other, &dir.path().join("c")).unwrap();
    assert_ne!(
        without_timing(&a.results_csv),
        without_timing(&c.results_csv)
    );
}

#[test]
fn train_then_evaluate_denoiser() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(None);
    let out = dir.path().join("train");
    let s = run(Scenario::TrainDenoiser, &cfg, &out).unwrap();
    let RunResults::Denoiser(rows) = &s.results else {
        panic!()
    };
    let names: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(
        names,
        ["identity", "full", "no-scaling", "no-threshold", "hadamard"]
    );
    assert_eq!(rows[1].n_params, 16);
    assert_eq!(rows[1].macs, 2 * 72);
    assert!(out.join("bmht_params.json").exists());
    let curve = std::fs::read_to_string(out.join("training_curve.csv")).unwrap();
    assert!(curve.starts_with("epoch,train_loss,val_loss,val_rms"));
    assert_eq!(curve.lines().count(), 1 + 4);

    let mut eval_cfg = cfg.clone();
    eval_cfg.denoiser.params = Some(out.join("bmht_params.json"));
    let e = run(Scenario::EvalDenoiser, &eval_cfg, &dir.path().join("eval")).unwrap();
    let RunResults::Denoiser(er) = &e.results else {
        panic!()
    };
    assert_eq!(er.len(), 2);
    assert_eq!(er[1].rms, rows[1].rms);
}

#[test]
fn oracle_checks_report_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(None);
    let out = dir.path().join("o");
    match run(Scenario::OracleChecks, &cfg, &out) {
        Ok(s) => {
            let RunResults::Oracles(rows) = s.results else {
                panic!()
            };
            assert!(rows.iter().all(|r| r.passed));
        }
        Err(Error::Numerical { message, .. }) => {
            assert!(message.contains("oracle checks failed"), "{message}")
        }
        Err(e) => panic!("unexpected error {e}"),
    }
    let text = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(text.starts_with("name,passed,observed,threshold,detail"));
    for name in [
        "inverse-mht-identity",
        "filter-bank-equivalence",
        "mht-round-trip",
        "score-finite-difference",
        "bmht-gradient-finite-difference",
        "covariance-law",
        "exhaustive-mle-match",
        "exhaustive-mle-within-5pct",
    ] {
        assert!(text.contains(name), "{name} missing");
    }
    for line in text.lines().skip(1).take(6) {
        assert!(line.contains(",true,"), "{line}");
    }
}

#[test]
fn invalid_configs_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<(ExperimentConfig, &str)> = vec![
        (
            ExperimentConfig {
                trials: 0,
                ..tiny(None)
            },
            "trials",
        ),
        (tiny(None), "denoiser.params"),
        (
            tiny(Some(dir.path().join("missing.json"))),
            "denoiser.params",
        ),
        (
            {
                let mut c = tiny(Some(identity_params(dir.path())));
                c.sweep.snr_db.clear();
                c
            },
            "sweep.snr_db",
        ),
    ];
    for (cfg, field) in cases {
        let err = run(Scenario::SweepSnr, &cfg, &dir.path().join("x")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains(field), "{err} should name {field}");
    }
}

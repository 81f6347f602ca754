use std::process::Command;

use triq::cli::{self, Aggregate, ExperimentConfig, ExperimentKind, RunReport};
use triq::nearness::NeuralNearness;

fn quick_norm2d(out: &std::path::Path, seeds: Vec<u64>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Norm2d);
    cfg.norm2d.training.epochs = 20;
    cfg.norm2d.training.eval_every = 10;
    cfg.seeds = seeds;
    cfg.out = out.to_path_buf();
    cfg.threads = Some(1);
    cfg
}

fn quick_nearness(out: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(ExperimentKind::Nearness);
    cfg.nearness.n = 12;
    cfg.nearness.neural = NeuralNearness::desk();
    cfg.nearness.neural.schedule.epochs = 5;
    cfg.out = out.to_path_buf();
    cfg.threads = Some(1);
    cfg
}

#[test]
fn identical_configs_give_identical_metrics() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = cli::run(&quick_norm2d(a.path(), vec![3])).unwrap();
    let rb = cli::run(&quick_norm2d(b.path(), vec![3])).unwrap();
    assert_eq!(ra.config_hash, rb.config_hash);
    let bits = |r: &RunReport| -> Vec<(String, u64)> {
        r.seeds[0].metrics.iter().map(|(k, v)| (k.clone(), v.to_bits())).collect()
    };
    assert_eq!(bits(&ra), bits(&rb));
    let read = |d: &std::path::Path| std::fs::read(d.join("seed-3").join("contours.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn single_run_gives_a_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let run = cli::run(&quick_norm2d(dir.path(), vec![1])).unwrap();
    let tables = cli::report(&[run]).unwrap();
    assert_eq!(tables.len(), 1);
    assert_eq!(tables[0].rows.len(), 1);
    assert!(tables[0].columns.contains(&"test_mse".to_string()));
}

#[test]
fn nearness_report_has_one_row_per_solver() {
    let dir = tempfile::tempdir().unwrap();
    let run = cli::run(&quick_nearness(dir.path())).unwrap();
    assert!(!run.failed());
    let loaded = RunReport::load(dir.path()).unwrap();
    let table = &cli::report(&[loaded]).unwrap()[0];
    assert_eq!(table.rows.len(), 4);
    assert_eq!(table.columns, ["J_MN", "J_MN^2", "#not_M3"]);
    let solvers: Vec<&str> = table.rows.iter().map(|r| r.label[2].as_str()).collect();
    assert_eq!(solvers, ["tf", "eucl", "wn", "dn"]);
}

#[test]
fn aggregate_over_three_seeds_matches_hand_computation() {
    let dir = tempfile::tempdir().unwrap();
    let run = cli::run(&quick_norm2d(dir.path(), vec![1, 2, 3])).unwrap();
    let vals: Vec<f64> = run.seeds.iter().map(|s| s.metrics["test_mse"]).collect();
    let mean = (vals[0] + vals[1] + vals[2]) / 3.0;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 2.0;
    let got: &Aggregate = &run.aggregate["test_mse"];
    assert_eq!(got.n, 3);
    assert!((got.mean - mean).abs() <= 1e-15 * mean.abs());
    assert!((got.sd - var.sqrt()).abs() <= 1e-12 * var.sqrt().max(1e-300));
    let row = &cli::report(&[run]).unwrap()[0].rows[0];
    assert!(!row.incomplete);
}

#[test]
fn unknown_experiment_kind_is_a_config_error() {
    let err = ExperimentConfig::from_toml("experiment = \"teleport\"\n").unwrap_err();
    assert!(err.to_string().contains("teleport") || err.to_string().contains("experiment"), "{err}");
    let err = ExperimentConfig::from_toml("experiment = \"norm2d\"\nmystery = 1\n").unwrap_err();
    assert!(err.to_string().contains("mystery"), "{err}");
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_triq");
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "experiment = \"teleport\"\n").unwrap();
    let status = Command::new(bin).args(["--config", bad.to_str().unwrap(), "norm2d"]).status().unwrap();
    assert_eq!(status.code(), Some(1));

    let status = Command::new(bin).args(["gvf", "--fraction", "0"]).status().unwrap();
    assert_eq!(status.code(), Some(1));

    let out = dir.path().join("run");
    let status = Command::new(bin)
        .args(["--out", out.to_str().unwrap(), "--seed", "2", "norm2d", "--model", "maha", "--epochs", "5"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("report.json").exists());
    assert!(out.join("config.toml").exists());
    assert!(out.join("seed-2").join("contours.csv").exists());

    let status = Command::new(bin).args(["report", out.to_str().unwrap()]).status().unwrap();
    assert_eq!(status.code(), Some(0));
}

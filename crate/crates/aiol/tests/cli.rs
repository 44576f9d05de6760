//! End-to-end tests of the `aiol` binary: file layout, exit codes, and
//! determinism of the pipeline outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aiol::config::ExperimentConfig;

const BIN: &str = env!("CARGO_BIN_EXE_aiol");

fn tmp(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn assert_status(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// A configuration small enough for seconds-long CLI tests.
fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.seeds = vec![7];
    c.data.n_per_class = 5;
    c.data.m_in = 40;
    c.data.m_out = 40;
    c.data.n_test_id = 50;
    c.data.n_test_seen = 20;
    c.data.n_test_unseen = 20;
    c.train.epochs = 6;
    c.train.iterations_per_epoch = 5;
    c.train.temperature_warmup_epochs = 1;
    c.train.hidden_layers = vec![8];
    c
}

fn write_config(dir: &Path, config: &ExperimentConfig) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, toml::to_string_pretty(config).unwrap()).unwrap();
    path
}

#[test]
fn gen_data_writes_six_splits_with_expected_row_counts() {
    let dir = tmp("gen_data_counts");
    let cfg = write_config(&dir, &small_config());
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("data").to_str().unwrap(),
        "gen-data",
    ]);
    assert_status(&out, 0);

    let lines = |name: &str| {
        fs::read_to_string(dir.join("data").join(name))
            .unwrap()
            .lines()
            .count()
    };
    // header + rows
    assert_eq!(lines("labeled.csv"), 1 + 10);
    assert_eq!(lines("unlabeled.csv"), 1 + 80);
    assert_eq!(lines("validation.csv"), 1 + 5);
    assert_eq!(lines("test_id.csv"), 1 + 50);
    assert_eq!(lines("test_seen_ood.csv"), 1 + 20);
    assert_eq!(lines("test_unseen_ood.csv"), 1 + 20);
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let dir = tmp("gen_data_determinism");
    let cfg = write_config(&dir, &small_config());
    for sub in ["a", "b"] {
        let out = run(&[
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.join(sub).to_str().unwrap(),
            "gen-data",
        ]);
        assert_status(&out, 0);
    }
    for name in [
        "labeled.csv",
        "unlabeled.csv",
        "validation.csv",
        "test_id.csv",
        "test_seen_ood.csv",
        "test_unseen_ood.csv",
    ] {
        let a = fs::read(dir.join("a").join(name)).unwrap();
        let b = fs::read(dir.join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn train_writes_trace_checkpoint_and_report() {
    let dir = tmp("train_outputs");
    let cfg = write_config(&dir, &small_config());
    let out_dir = dir.join("out");
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "train",
    ]);
    assert_status(&out, 0);
    assert!(out_dir.join("trace_seed7.csv").exists());
    assert!(out_dir.join("checkpoint_seed7.bin").exists());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["per_seed"].as_array().unwrap().len(), 1);
    let trace = fs::read_to_string(out_dir.join("trace_seed7.csv")).unwrap();
    // header + one row per epoch
    assert_eq!(trace.lines().count(), 1 + 6);
    assert!(trace.starts_with("epoch,T_t,"));
}

#[test]
fn train_from_generated_files_matches_in_memory_generation() {
    let dir = tmp("train_from_files");
    let cfg = write_config(&dir, &small_config());
    let data_dir = dir.join("data");
    assert_status(
        &run(&[
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            data_dir.to_str().unwrap(),
            "gen-data",
        ]),
        0,
    );
    for (sub, extra) in [("mem", None), ("file", Some(data_dir.clone()))] {
        let out_dir = dir.join(sub);
        let mut args = vec![
            "--config".to_string(),
            cfg.to_str().unwrap().to_string(),
            "--out".to_string(),
            out_dir.to_str().unwrap().to_string(),
            "train".to_string(),
        ];
        if let Some(d) = &extra {
            args.push("--data".to_string());
            args.push(d.to_str().unwrap().to_string());
        }
        let args: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        assert_status(&run(&args), 0);
    }
    let a = fs::read(dir.join("mem").join("trace_seed7.csv")).unwrap();
    let b = fs::read(dir.join("file").join("trace_seed7.csv")).unwrap();
    assert_eq!(a, b, "CSV round-trip changed the training trajectory");
}

#[test]
fn train_with_missing_data_dir_exits_one() {
    let dir = tmp("train_missing_data");
    let cfg = write_config(&dir, &small_config());
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
        "train",
        "--data",
        dir.join("nowhere").to_str().unwrap(),
    ]);
    assert_status(&out, 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("missing data file"), "stderr: {stderr}");
}

#[test]
fn unknown_config_key_exits_one() {
    let dir = tmp("unknown_key");
    let cfg = dir.join("config.toml");
    fs::write(&cfg, "[train]\nepochz = 3\n").unwrap();
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
        "gen-data",
    ]);
    assert_status(&out, 1);
}

#[test]
fn eval_refuses_checkpoint_from_different_config() {
    let dir = tmp("eval_hash_mismatch");
    let cfg_a = write_config(&dir, &small_config());
    let out_dir = dir.join("out");
    assert_status(
        &run(&[
            "--config",
            cfg_a.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "train",
        ]),
        0,
    );

    let mut other = small_config();
    other.data.noise = 0.33;
    let cfg_b = dir.join("config_b.toml");
    fs::write(&cfg_b, toml::to_string_pretty(&other).unwrap()).unwrap();

    let ckpt = out_dir.join("checkpoint_seed7.bin");
    let out = run(&[
        "--config",
        cfg_b.to_str().unwrap(),
        "--out",
        dir.join("eval").to_str().unwrap(),
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_status(&out, 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("hash"), "stderr: {stderr}");

    // and with the matching config it succeeds
    let out = run(&[
        "--config",
        cfg_a.to_str().unwrap(),
        "--out",
        dir.join("eval_ok").to_str().unwrap(),
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_status(&out, 0);
    assert!(dir.join("eval_ok").join("eval_report.json").exists());
}

#[test]
fn diverging_run_exits_two() {
    let dir = tmp("divergence");
    let mut config = small_config();
    config.train.lr = 1e18;
    let cfg = write_config(&dir, &config);
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
        "train",
    ]);
    assert_status(&out, 2);
}

#[test]
fn verify_theorem_reports_passing_pairs() {
    let dir = tmp("verify_theorem");
    let out_dir = dir.join("out");
    let out = run(&[
        "--out",
        out_dir.to_str().unwrap(),
        "verify-theorem",
        "--pair",
        "0.999,0.8",
        "--pair",
        "0.9,0.7",
        "--random",
        "50",
    ]);
    assert_status(&out, 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("theorem_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["total"], 52);
    assert_eq!(report["passed"], 52);
    assert!(out_dir.join("gap_curve_1.csv").exists());
    assert!(out_dir.join("gap_curve_2.csv").exists());
    // each explicit pair gets a plottable curve: header plus one row per grid point
    let curve = fs::read_to_string(out_dir.join("gap_curve_1.csv")).unwrap();
    assert!(curve.lines().count() > 100);
}

#[test]
fn verify_theorem_rejects_malformed_pair() {
    let dir = tmp("verify_theorem_bad_pair");
    let out = run(&[
        "--out",
        dir.join("out").to_str().unwrap(),
        "verify-theorem",
        "--pair",
        "0.9;0.7",
    ]);
    assert_status(&out, 1);
}

#[test]
fn seed_override_changes_outputs() {
    let dir = tmp("seed_override");
    let cfg = write_config(&dir, &small_config());
    let out_dir = dir.join("out");
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "3,4",
        "train",
    ]);
    assert_status(&out, 0);
    assert!(out_dir.join("trace_seed3.csv").exists());
    assert!(out_dir.join("trace_seed4.csv").exists());
    assert!(!out_dir.join("trace_seed7.csv").exists());
}

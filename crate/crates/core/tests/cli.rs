//! End-to-end tests of the command-line surface: pipelines, exit codes,
//! and the restriction-commutes-with-measurement property.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_facenms")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let path = dir.join("synth.json");
    std::fs::write(&path, json).unwrap();
    path
}

const FIXED_CONFIG: &str = r#"{
  "dim": 64, "identities": 200, "faces_mean": 50.0, "faces_std": 30.0,
  "noise_sigma": 0.25, "dup_prob": 0.3, "dup_jitter": 0.02, "seed": 7,
  "holdout_per_identity": 0
}"#;

const SMALL_CONFIG: &str = r#"{
  "dim": 16, "identities": 20, "faces_mean": 8.0, "faces_std": 4.0,
  "noise_sigma": 0.25, "dup_prob": 0.3, "dup_jitter": 0.02, "seed": 3,
  "holdout_per_identity": 3
}"#;

fn json_field(path: &Path, field: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(path).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value[field].clone()
}

#[test]
fn calibrate_then_sample_hits_the_target_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), FIXED_CONFIG);
    let train = dir.path().join("train.bin");
    let calib = dir.path().join("calib.json");
    let manifest = dir.path().join("manifest.json");

    run_ok(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--out-train",
        train.to_str().unwrap(),
    ]);
    // Sidecar lands next to the train file as "<out-train>.config.json".
    assert!(PathBuf::from(format!("{}.config.json", train.display())).exists());

    run_ok(&[
        "calibrate",
        "--in",
        train.to_str().unwrap(),
        "--target-ratio",
        "0.6",
        "--tol",
        "0.005",
        "--out",
        calib.to_str().unwrap(),
    ]);
    let nt = json_field(&calib, "nt").as_f64().unwrap();
    let achieved = json_field(&calib, "achieved_ratio").as_f64().unwrap();
    assert!((achieved - 0.6).abs() <= 0.005);

    run_ok(&[
        "sample",
        "--in",
        train.to_str().unwrap(),
        "--strategy",
        "face_nms",
        "--nt",
        &nt.to_string(),
        "--out",
        manifest.to_str().unwrap(),
    ]);
    let ratio = json_field(&manifest, "totals")["ratio"].as_f64().unwrap();
    assert!(
        (ratio - 0.6).abs() <= 0.005,
        "pipeline ratio {ratio} misses 0.6"
    );
}

#[test]
fn sampling_with_top_threshold_keeps_everything() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let train = dir.path().join("train.bin");
    let holdout = dir.path().join("holdout.bin");
    let manifest = dir.path().join("manifest.json");
    run_ok(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--out-train",
        train.to_str().unwrap(),
        "--out-holdout",
        holdout.to_str().unwrap(),
    ]);
    let stdout = run_ok(&[
        "sample",
        "--in",
        train.to_str().unwrap(),
        "--strategy",
        "face_nms",
        "--nt",
        "1.01",
        "--out",
        manifest.to_str().unwrap(),
    ]);
    assert!(stdout.contains("ratio 1.000000"), "stdout: {stdout}");
    let totals = json_field(&manifest, "totals");
    assert_eq!(totals["retained"], totals["original"]);
}

#[test]
fn calibrate_with_target_one_returns_top_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let train = dir.path().join("train.bin");
    let holdout = dir.path().join("holdout.bin");
    let calib = dir.path().join("calib.json");
    run_ok(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--out-train",
        train.to_str().unwrap(),
        "--out-holdout",
        holdout.to_str().unwrap(),
    ]);
    run_ok(&[
        "calibrate",
        "--in",
        train.to_str().unwrap(),
        "--target-ratio",
        "1.0",
        "--tol",
        "0.005",
        "--out",
        calib.to_str().unwrap(),
    ]);
    assert_eq!(json_field(&calib, "nt").as_f64().unwrap(), 1.01);
    assert_eq!(json_field(&calib, "achieved_ratio").as_f64().unwrap(), 1.0);
}

#[test]
fn restriction_commutes_with_measurement() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let train = dir.path().join("train.bin");
    let holdout = dir.path().join("holdout.bin");
    let manifest = dir.path().join("manifest.json");
    run_ok(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--out-train",
        train.to_str().unwrap(),
        "--out-holdout",
        holdout.to_str().unwrap(),
    ]);
    run_ok(&[
        "sample",
        "--in",
        train.to_str().unwrap(),
        "--strategy",
        "identity_random",
        "--ratio",
        "0.5",
        "--seed",
        "9",
        "--out",
        manifest.to_str().unwrap(),
    ]);

    // Route A: apply, then measure the restricted dataset.
    let restricted = dir.path().join("restricted.bin");
    let report_a = dir.path().join("report_a.json");
    run_ok(&[
        "apply",
        "--in",
        train.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        restricted.to_str().unwrap(),
    ]);
    run_ok(&[
        "metrics",
        "--in",
        restricted.to_str().unwrap(),
        "--bins",
        "32",
        "--out",
        report_a.to_str().unwrap(),
    ]);

    // Route B: measure under the manifest directly.
    let report_b = dir.path().join("report_b.json");
    run_ok(&[
        "metrics",
        "--in",
        train.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--bins",
        "32",
        "--out",
        report_b.to_str().unwrap(),
    ]);

    let a = std::fs::read(&report_a).unwrap();
    let b = std::fs::read(&report_b).unwrap();
    assert_eq!(a, b, "reports must be byte-identical");
}

#[test]
fn convert_round_trip_preserves_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let train = dir.path().join("train.bin");
    let holdout = dir.path().join("holdout.bin");
    run_ok(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--out-train",
        train.to_str().unwrap(),
        "--out-holdout",
        holdout.to_str().unwrap(),
    ]);
    let jsonl = dir.path().join("train.jsonl");
    let back = dir.path().join("back.bin");
    let out1 = run_ok(&[
        "convert",
        "--in",
        train.to_str().unwrap(),
        "--out",
        jsonl.to_str().unwrap(),
    ]);
    let out2 = run_ok(&[
        "convert",
        "--in",
        jsonl.to_str().unwrap(),
        "--out",
        back.to_str().unwrap(),
    ]);
    let fp1 = out1.split_whitespace().last().unwrap().to_string();
    let fp2 = out2.split_whitespace().last().unwrap().to_string();
    assert_eq!(fp1, fp2);
    assert!(out1.starts_with("binary -> jsonl"));
    assert!(out2.starts_with("jsonl -> binary"));
}

#[test]
fn eval_writes_the_comparison_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let train = dir.path().join("train.bin");
    let holdout = dir.path().join("holdout.bin");
    run_ok(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--out-train",
        train.to_str().unwrap(),
        "--out-holdout",
        holdout.to_str().unwrap(),
    ]);
    let m1 = dir.path().join("m1.json");
    let m2 = dir.path().join("m2.json");
    run_ok(&[
        "sample",
        "--in",
        train.to_str().unwrap(),
        "--strategy",
        "identity_random",
        "--ratio",
        "0.6",
        "--seed",
        "4",
        "--out",
        m1.to_str().unwrap(),
    ]);
    run_ok(&[
        "sample",
        "--in",
        train.to_str().unwrap(),
        "--strategy",
        "away_center",
        "--ratio",
        "0.6",
        "--out",
        m2.to_str().unwrap(),
    ]);

    let table = dir.path().join("table.csv");
    let json = dir.path().join("eval.json");
    run_ok(&[
        "eval",
        "--train",
        train.to_str().unwrap(),
        "--holdout",
        holdout.to_str().unwrap(),
        "--manifests",
        &format!("{},{}", m1.display(), m2.display()),
        "--far",
        "1e-1,2e-1",
        "--seed",
        "5",
        "--out",
        table.to_str().unwrap(),
        "--json",
        json.to_str().unwrap(),
    ]);
    let csv = std::fs::read_to_string(&table).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "strategy,ratio,rank1,tar@1e-1,tar@2e-1");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("full,1.000000,"));
    assert!(rows[1].starts_with("identity_random,"));
    assert!(rows[2].starts_with("away_center,"));
    assert!(json.exists());
}

#[test]
fn metrics_csv_histogram_has_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let train = dir.path().join("train.bin");
    let holdout = dir.path().join("holdout.bin");
    run_ok(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--out-train",
        train.to_str().unwrap(),
        "--out-holdout",
        holdout.to_str().unwrap(),
    ]);
    let report = dir.path().join("report.json");
    let hist = dir.path().join("hist.csv");
    run_ok(&[
        "metrics",
        "--in",
        train.to_str().unwrap(),
        "--bins",
        "8",
        "--out",
        report.to_str().unwrap(),
        "--csv",
        hist.to_str().unwrap(),
    ]);
    let csv = std::fs::read_to_string(&hist).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "bin_left,bin_right,frequency");
    assert_eq!(lines.count(), 8);
    let report_value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(report_value["tool_version"].is_string());
    assert!(report_value["dataset_fingerprint"].is_string());
}

#[test]
fn io_failures_exit_2_and_validation_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    // Missing input file: I/O error.
    let out = run(&[
        "metrics",
        "--in",
        dir.path().join("absent.bin").to_str().unwrap(),
        "--bins",
        "8",
        "--out",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "missing file should exit 2");

    let config = write_config(dir.path(), SMALL_CONFIG);
    let train = dir.path().join("train.bin");
    let holdout = dir.path().join("holdout.bin");
    run_ok(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--out-train",
        train.to_str().unwrap(),
        "--out-holdout",
        holdout.to_str().unwrap(),
    ]);

    // Wrong parameter for the strategy: validation error.
    let out = run(&[
        "sample",
        "--in",
        train.to_str().unwrap(),
        "--strategy",
        "face_nms",
        "--ratio",
        "0.5",
        "--out",
        dir.path().join("m.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));

    // Randomized strategy without --seed: validation error.
    let out = run(&[
        "sample",
        "--in",
        train.to_str().unwrap(),
        "--strategy",
        "identity_random",
        "--ratio",
        "0.5",
        "--out",
        dir.path().join("m.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    // Unknown flag: usage error, also 1.
    let out = run(&["sample", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn normalize_flag_admits_raw_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.jsonl");
    std::fs::write(
        &raw,
        "{\"id\":\"a\",\"faces\":[{\"i\":0,\"v\":[3.0,4.0]},{\"i\":1,\"v\":[0.0,2.0]}]}\n",
    )
    .unwrap();
    let out_bin = dir.path().join("norm.bin");
    // Without --normalize the raw vectors are rejected.
    let out = run(&[
        "convert",
        "--in",
        raw.to_str().unwrap(),
        "--out",
        out_bin.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    run_ok(&[
        "convert",
        "--normalize",
        "--in",
        raw.to_str().unwrap(),
        "--out",
        out_bin.to_str().unwrap(),
    ]);
    assert!(out_bin.exists());
}

#[test]
fn stdout_is_stable_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let train = dir.path().join("train.bin");
    let holdout = dir.path().join("holdout.bin");
    run_ok(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--out-train",
        train.to_str().unwrap(),
        "--out-holdout",
        holdout.to_str().unwrap(),
    ]);
    let report = dir.path().join("r.json");
    let a = run_ok(&[
        "metrics",
        "--in",
        train.to_str().unwrap(),
        "--bins",
        "16",
        "--out",
        report.to_str().unwrap(),
        "--threads",
        "1",
    ]);
    let b = run_ok(&[
        "metrics",
        "--in",
        train.to_str().unwrap(),
        "--bins",
        "16",
        "--out",
        report.to_str().unwrap(),
        "--threads",
        "8",
    ]);
    assert_eq!(a, b);
}

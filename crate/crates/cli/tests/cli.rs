//! End-to-end tests of the `compams` binary: exit codes, artifact
//! layout, override handling, and the config round-trip through
//! summary.json.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_compams")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const QUAD_TOPK: &str = r#"
workers = 2
iters = 25
seed = 3

[compressor]
kind = "topk"
ratio = 0.1

[optimizer]
lr = { schedule = "constant", eta = 0.05 }

[objective]
kind = "quadratic"
dim = 20
noise_std = 0.2

[theta0]
init = "constant"
value = 1.0
"#;

fn run_cli(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

#[test]
fn run_writes_artifacts_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", QUAD_TOPK);
    let out_dir = dir.path().join("artifacts");
    let out = run_cli(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let metrics = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with(
        "t,epoch,loss,grad_norm_sq,bits_uplink_total,bits_downlink_total,lr,max_error_norm_sq,wall_ns\n"
    ));
    assert_eq!(metrics.lines().count(), 1 + 25 + 1); // header + t=0 + 25 rounds

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["rounds"], 25);
    assert_eq!(summary["config"]["workers"], 2);
    assert!(summary["final_loss"].is_f64());
}

#[test]
fn invalid_ratio_exits_two_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", QUAD_TOPK);
    let out = run_cli(&["run", cfg.to_str().unwrap(), "--set", "compressor.ratio=2.0"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("compressor.ratio"), "{stderr}");
}

#[test]
fn parse_error_exits_two_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "broken.toml", "workers = = 1\n");
    let out = run_cli(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("broken.toml:1:"), "{stderr}");
}

#[test]
fn divergence_exits_three_with_round_index() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", QUAD_TOPK);
    let out = run_cli(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("d").to_str().unwrap(),
        "--set",
        "optimizer.kind=sgd",
        "--set",
        "optimizer.lr.eta=1e150",
        "--set",
        "compressor.kind=identity",
        "--set",
        "iters=400",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("round"), "{stderr}");
}

#[test]
fn seed_flag_reproduces_byte_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", QUAD_TOPK);
    let mut blobs = Vec::new();
    for label in ["a", "b"] {
        let out_dir = dir.path().join(label);
        let out = run_cli(&[
            "run",
            cfg.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
        blobs.push(std::fs::read(out_dir.join("metrics.csv")).unwrap());
    }
    assert_eq!(blobs[0], blobs[1]);
}

#[test]
fn summary_config_echo_reruns_identically() {
    // parse -> run -> re-serialize effective config -> run again:
    // byte-identical metrics
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", QUAD_TOPK);
    let first_dir = dir.path().join("first");
    let out = run_cli(&[
        "run",
        cfg.to_str().unwrap(),
        "--set",
        "seed=21",
        "--out",
        first_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(first_dir.join("summary.json")).unwrap())
            .unwrap();
    let echo = write_config(dir.path(), "echo.json", &summary["config"].to_string());
    let second_dir = dir.path().join("second");
    let out = run_cli(&["run", echo.to_str().unwrap(), "--out", second_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let first = std::fs::read(first_dir.join("metrics.csv")).unwrap();
    let second = std::fs::read(second_dir.join("metrics.csv")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn sweep_writes_rows_with_scaled_lr() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sweep.toml",
        r#"
workers = 1
iters = 4000
seed = 9

[compressor]
kind = "identity"

[optimizer]
lr = { schedule = "sqrt_scaled", c = 0.02 }

[objective]
kind = "quadratic"
dim = 30
noise_std = 3.0

[theta0]
init = "constant"
value = 2.0
"#,
    );
    let out_dir = dir.path().join("sweep");
    let out = run_cli(&[
        "sweep",
        cfg.to_str().unwrap(),
        "--workers",
        "1,2,4",
        "--target-loss",
        "20.0",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("speedup.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "n,lr,iterations_to_target,bits_to_target,reached");
    assert_eq!(lines.len(), 4);
    for (line, n) in lines[1..].iter().zip([1f64, 2.0, 4.0]) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0], format!("{n}"));
        let lr: f64 = cells[1].parse().unwrap();
        assert_eq!(lr, 0.02 * n.sqrt());
        assert_eq!(cells[4], "true");
    }
}

#[test]
fn sweep_records_unreached_targets_without_failing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", QUAD_TOPK);
    let out_dir = dir.path().join("sweep");
    let out = run_cli(&[
        "sweep",
        cfg.to_str().unwrap(),
        "--workers",
        "1",
        "--target-loss",
        "1e-30",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(out_dir.join("speedup.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().ends_with(",,,false"));
}

#[test]
fn compare_ef_writes_paired_files_and_rejects_identity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", QUAD_TOPK);
    let out_dir = dir.path().join("ef");
    let out = run_cli(&["compare-ef", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let on = std::fs::read_to_string(out_dir.join("ef_on.csv")).unwrap();
    let off = std::fs::read_to_string(out_dir.join("ef_off.csv")).unwrap();
    assert_eq!(on.lines().count(), off.lines().count());

    let out = run_cli(&[
        "compare-ef",
        cfg.to_str().unwrap(),
        "--set",
        "compressor.kind=identity",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_threads_env_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", QUAD_TOPK);
    let out = Command::new(bin())
        .args(["run", cfg.to_str().unwrap()])
        .env("COMPAMS_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("COMPAMS_THREADS"));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cosprune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cosprune"))
        .args(args)
        .env_remove("COSPRUNE_OUT")
        .output()
        .expect("spawn cosprune")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn unknown_field_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"seed": 1, "train": {"epochz": 3}}"#);
    let out = cosprune(&["gen-data", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train"));
}

#[test]
fn every_invalid_field_is_listed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"seed": 1, "train": {"epochs": 0}, "prune": {"filters_per_event": 0}}"#);
    let out = cosprune(&["train", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train.epochs") && err.contains("prune.filters_per_event"), "{err}");
}

#[test]
fn unknown_criterion_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"seed": 1}"#);
    let out = cosprune(&["prune", "--config", &cfg, "--criterion", "magnitude"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"seed": 1}"#);
    let missing = dir.path().join("nope").to_string_lossy().into_owned();
    let out = cosprune(&["retrain", "--config", &cfg, "--checkpoint", &missing]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn selftest_passes() {
    let out = cosprune(&["selftest", "--seed", "3"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.contains("[PASS]") && !text.contains("[FAIL]"));
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"seed": 5, "output_dir": {root:?},
                "dataset": {{"n_samples": 30}},
                "train": {{"epochs": 1}},
                "prune": {{"max_events": 2}},
                "retrain": {{"epochs": 1, "lr_sweep": [0.001, 0.0005]}}}}"#
        ),
    );
    for args in [
        vec!["gen-data", "--config", &cfg],
        vec!["train", "--config", &cfg],
        vec!["prune", "--config", &cfg],
        vec!["prune", "--config", &cfg, "--criterion", "taylor_squared"],
    ] {
        let out = cosprune(&args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["data/manifest.json", "base/train_log.csv", "prune-cosprune/curves.csv", "prune-cosprune/rep-0/history.jsonl"] {
        assert!(root.join(f).exists(), "{f}");
    }
    let curves = fs::read_to_string(root.join("prune-cosprune/curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 1 + 3);

    let ckpt = root.join("prune-cosprune/rep-0/event-002").to_string_lossy().into_owned();
    let out = cosprune(&["retrain", "--config", &cfg, "--checkpoint", &ckpt]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.join("retrain-cosprune/runs.csv").exists());

    let out = cosprune(&["eval", "--config", &cfg, "--checkpoint", &ckpt]);
    assert!(out.status.success());
    let eval: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(eval["metrics"]["pixel_accuracy"].as_f64().is_some());

    let report = dir.path().join("report").to_string_lossy().into_owned();
    let (a, b) = (root.join("prune-taylor_squared"), root.join("prune-cosprune"));
    let out = cosprune(&["report", a.to_str().unwrap(), b.to_str().unwrap(), "--out", &report, "--tolerance", "0.5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(Path::new(&report).join("report.csv").exists());
}

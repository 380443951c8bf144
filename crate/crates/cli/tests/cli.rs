use std::path::PathBuf;
use std::process::{Command, Output};

fn kinshield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinshield")).args(args).output().unwrap()
}

fn config(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(format!("{name}.json"))
        .display()
        .to_string()
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(kinshield(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(kinshield(&["run"]).status.code(), Some(1));
    assert_eq!(kinshield(&["--help"]).status.code(), Some(0));
    let bad_format = kinshield(&["run", "--config", &config("far"), "--format", "xml"]);
    assert_eq!(bad_format.status.code(), Some(1));
}

#[test]
fn missing_config_is_reported() {
    let out = kinshield(&["run", "--config", "/no/such/config.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn presets_are_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let out = kinshield(&["presets", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let listed = String::from_utf8_lossy(&out.stdout).lines().count();
    assert_eq!(listed, 3);
    assert!(dir.path().join("scenes/far.json").exists());
    let far = dir.path().join("far.json");
    let run = kinshield(&["run", "--config", far.to_str().unwrap(), "--episodes", "2"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).contains("episodes=2"));
}

#[test]
fn json_report_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let trace = dir.path().join("t.csv");
    let out = kinshield(&[
        "run",
        "--config",
        &config("partial"),
        "--episodes",
        "3",
        "--format",
        "json",
        "--out",
        report.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["records"].as_array().unwrap().len(), 3);
    assert_eq!(std::fs::read_to_string(&trace).unwrap().lines().count(), 4);
}

#[test]
fn unreachable_start_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    kinshield(&["presets", "--out", dir.path().to_str().unwrap()]);
    let path = dir.path().join("far.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    v["experiment"]["env"]["start_clearance"] = serde_json::json!(10.0);
    std::fs::write(&path, v.to_string()).unwrap();
    let out = kinshield(&["run", "--config", path.to_str().unwrap(), "--episodes", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("s.csv");
    let out = kinshield(&[
        "sweep-n",
        "--config",
        &config("far"),
        "--episodes",
        "2",
        "--n",
        "2,11",
        "--out",
        sweep.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&sweep).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().last().unwrap().ends_with(",true"));
    assert_eq!(
        kinshield(&["sweep-n", "--config", &config("far"), "--n", "12"]).status.code(),
        Some(1)
    );

    let cmp = dir.path().join("c.json");
    let out = kinshield(&["compare", "--config", &config("middle"), "--episodes", "2", "--out", cmp.to_str().unwrap()]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cmp).unwrap()).unwrap();
    assert_eq!(v["baseline"]["corrector_enabled"], false);
    assert_eq!(v["corrected"]["collisions"], 0);
}

#[test]
fn validate_passes_on_shipped_config() {
    let out = kinshield(&["validate", "--config", &config("middle"), "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 6);
}

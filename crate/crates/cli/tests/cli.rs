use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lscs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lscs")).args(args).output().unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn version_succeeds() {
    let o = lscs(&["version"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("lscs "));
}

#[test]
fn bad_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"kind":"static_table","seed":1}"#).unwrap();
    let o = lscs(&["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = lscs(&["run", "/nonexistent/config.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn small_bound_validation_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("bound_validation.json");
    let out = dir.path().join("out");
    let o = lscs(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--trials",
        "5",
        "--seed",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("manifest.json").exists());
    assert!(out.join("bound_checks.csv").exists());
}

#[test]
fn rip_table_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rip.json");
    let o = lscs(&[
        "rip-table",
        "--n",
        "6",
        "--m",
        "10",
        "--max-s",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(v.is_object());
}

#[test]
fn check_stability_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("table.json");
    let cfg = configs().join("check_stability.json");
    let o = lscs(&[
        "check-stability",
        cfg.to_str().unwrap(),
        "--rip-table",
        table.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v.get("thresholds").is_some());
    assert!(table.exists());
}

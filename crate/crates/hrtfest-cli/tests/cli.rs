//! CLI contract tests: idempotent data preparation, machine-parsable
//! errors, and stale-upstream refusal.

use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hrtfest"))
        .args(args)
        .arg("--desk-scale")
        .current_dir(dir)
        .output()
        .expect("spawn cli")
}

fn tmp_root(name: &str) -> std::path::PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn prepare_data_is_idempotent() {
    let dir = tmp_root("cli-idempotent");
    assert!(run(&dir, &["prepare-data"]).status.success());
    let manifest = dir.join("runs/data/manifest.json");
    let first = std::fs::read(&manifest).unwrap();
    assert!(run(&dir, &["prepare-data"]).status.success());
    let second = std::fs::read(&manifest).unwrap();
    // identical config/seed -> identical artifact checksums
    assert_eq!(first, second);
}

#[test]
fn missing_upstream_yields_error_json() {
    let dir = tmp_root("cli-missing-upstream");
    let out = run(&dir, &["train"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let payload: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(payload["stage"], "train");
    assert!(payload["error"].as_str().unwrap().contains("data"));
}

#[test]
fn missing_data_dir_is_named_in_error() {
    let dir = tmp_root("cli-missing-source");
    let cfg = dir.join("config.toml");
    std::fs::write(&cfg, "[data]\nsource = \"/no/such/dir\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hrtfest"))
        .args(["prepare-data", "--config"])
        .arg(&cfg)
        .current_dir(&dir)
        .output()
        .expect("spawn cli");
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let payload: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert!(payload["error"].as_str().unwrap().contains("/no/such/dir"));
}

#[test]
fn stale_upstream_is_refused_without_force() {
    let dir = tmp_root("cli-stale");
    assert!(run(&dir, &["prepare-data"]).status.success());
    // different seed -> different config hash -> downstream must refuse
    let out = Command::new(env!("CARGO_BIN_EXE_hrtfest"))
        .args(["gen-tasks", "--desk-scale", "--seed", "9"])
        .current_dir(&dir)
        .output()
        .expect("spawn cli");
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--force"), "stderr: {stderr}");
}

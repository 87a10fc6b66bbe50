//! Exit codes, the manifest and the stage cache, exercised through the binary.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn homog(args: &[&str], out: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_homog"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn homog")
        .status
        .code()
        .unwrap_or(-1)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn cache_hits(out: &Path) -> Vec<(String, bool)> {
    read_json(&out.join("manifest.json"))["cache"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| (e["stage"].as_str().unwrap().to_string(), e["hit"].as_bool().unwrap()))
        .collect()
}

#[test]
fn missing_config_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(homog(&["mixing"], tmp.path()), 2);
}

#[test]
fn unknown_field_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("sine_1d.toml")).unwrap() + "\nunexpected = 1\n";
    let path = tmp.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    let out = tmp.path().join("out");
    assert_eq!(homog(&["validate", "--config", path.to_str().unwrap()], &out), 2);
}

#[test]
fn unreadable_config_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.toml");
    assert_eq!(homog(&["validate", "--config", missing.to_str().unwrap()], tmp.path()), 4);
}

#[test]
fn dimension_mismatch_is_rejected_as_input() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("constant_identity.toml"))
        .unwrap()
        .replace("periods = [1.0, 1.0]", "periods = [1.0]");
    let path = tmp.path().join("flat.toml");
    std::fs::write(&path, text).unwrap();
    let out = tmp.path().join("out");
    assert_eq!(homog(&["mixing", "--config", path.to_str().unwrap(), "--budget", "smoke"], &out), 2);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["status"], "error");
    assert_eq!(manifest["error"]["exit_code"], 2);
}

#[test]
fn constant_identity_validates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("constant_identity.toml");
    assert_eq!(homog(&["validate", "--config", cfg.to_str().unwrap()], tmp.path()), 0);
    assert_eq!(read_json(&tmp.path().join("validation.json"))["all_passed"], true);
    let manifest = read_json(&tmp.path().join("manifest.json"));
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["subcommand"], "validate");
}

#[test]
fn stages_are_cached_and_invalidated_by_coefficient_changes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = config("sine_1d.toml");
    let args = ["mixing", "--config", cfg.to_str().unwrap(), "--budget", "smoke"];
    assert_eq!(homog(&args, &out), 0);
    assert_eq!(cache_hits(&out), vec![("mixing".to_string(), false)]);
    assert_eq!(homog(&args, &out), 0);
    assert_eq!(cache_hits(&out), vec![("mixing".to_string(), true)]);

    let text = std::fs::read_to_string(&cfg).unwrap().replace("builtin = \"sine_1d\"", "builtin = \"sine_1d\"\noptions = { sigma_scale = 1.5 }");
    let scaled = tmp.path().join("scaled.toml");
    std::fs::write(&scaled, text).unwrap();
    assert_eq!(homog(&["mixing", "--config", scaled.to_str().unwrap(), "--budget", "smoke"], &out), 0);
    assert_eq!(cache_hits(&out), vec![("mixing".to_string(), false)]);
}

#[test]
fn seed_override_changes_results_and_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("sine_1d.toml");
    let run = |seed: &str, dir: &str| {
        let out = tmp.path().join(dir);
        assert_eq!(homog(&["mixing", "--config", cfg.to_str().unwrap(), "--budget", "smoke", "--seed", seed], &out), 0);
        (read_json(&out.join("manifest.json"))["global_seed"].clone(), std::fs::read(out.join("mixing.csv")).unwrap())
    };
    let (s1, a) = run("11", "a");
    let (s2, b) = run("12", "b");
    assert_eq!(s1, 11);
    assert_eq!(s2, 12);
    assert_ne!(a, b);
}

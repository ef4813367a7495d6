use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_kamlab");

const CONFIG: &str = r#"
kind = "barrier_suite"
seed = 5

[model]
name = "shifted_quadratic"

[grid]
d = 1
n = 16

[vset]
vmax = 3.0
m = 13

[critical]
methods = ["lp"]

[suite]
aubry_tol = 0.5

[thresholds]
column_residual = 10.0
"#;

fn kamlab(args: &[&str], root: &Path) -> Output {
    Command::new(BIN).args(args).env("KAMLAB_OUTPUT_ROOT", root).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn list_models_prints_builtins() {
    let dir = tempfile::tempdir().unwrap();
    let out = kamlab(&["list-models"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for m in ["mechanical", "shifted_quadratic", "arctan_discount", "sigma_discounted"] {
        assert!(text.lines().any(|l| l == m), "{text}");
    }
}

#[test]
fn validate_accepts_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), "good.toml", CONFIG);
    assert!(kamlab(&["validate", &good], dir.path()).status.success());
    let bad = write_config(dir.path(), "bad.toml", &CONFIG.replace("m = 13", "m = 12"));
    let out = kamlab(&["validate", &bad], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("odd"));
    let missing = dir.path().join("missing.toml");
    assert_eq!(kamlab(&["validate", missing.to_str().unwrap()], dir.path()).status.code(), Some(2));
}

#[test]
fn run_writes_under_output_root_and_reruns_match() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "suite.toml", CONFIG);
    let out = kamlab(&["--threads", "1", "run", &cfg], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let first = dir.path().join("artifacts/suite");
    assert!(first.join("manifest.json").is_file());
    let second = dir.path().join("again");
    let out = kamlab(&["run", &cfg, "--output", second.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    let diff = kamlab(&["diff-artifacts", first.to_str().unwrap(), second.to_str().unwrap()], dir.path());
    assert!(diff.status.success(), "{}", String::from_utf8_lossy(&diff.stdout));
    std::fs::write(second.join("barrier.csv"), b"changed").unwrap();
    let diff = kamlab(&["diff-artifacts", first.to_str().unwrap(), second.to_str().unwrap()], dir.path());
    assert_eq!(diff.status.code(), Some(1));
    assert!(String::from_utf8(diff.stdout).unwrap().contains("differs: barrier.csv"));
}

#[test]
fn failed_threshold_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let strict = CONFIG.replace("column_residual = 10.0", "column_residual = 1e-12");
    let cfg = write_config(dir.path(), "tight.toml", &strict);
    let out = kamlab(&["run", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stdout).unwrap().contains("row_residual"));
}

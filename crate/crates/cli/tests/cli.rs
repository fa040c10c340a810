use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
name = "tiny"
lambda = -2.0
t_end = 0.2

[grid]
n = 128
x_min = -20.0
x_max = 20.0

[potential.shape]
kind = "free"

[soliton]
energy = 1.0
analytic = true

[integrator]
dt = 1e-3
record_every = 50

[integrator.absorber]
kind = "none"
"#;

fn cli(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_soliton-well"));
    cmd.args(args).arg("--quiet").env_remove("SOLITON_WELL_OUT");
    if let Some(p) = out_env {
        cmd.env("SOLITON_WELL_OUT", p);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("scenario.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn errors(out: &Output) -> Vec<String> {
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    v["errors"].as_array().unwrap().iter().map(|e| e.as_str().unwrap().to_string()).collect()
}

#[test]
fn validate_accepts_good_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["validate", "--config", &write_config(dir.path(), TINY)], None);
    assert_eq!(out.status.code(), Some(0));
    assert!(errors(&out).is_empty());
}

#[test]
fn validate_lists_errors_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("lambda = -2.0", "lambda = 1.0");
    let out = cli(&["validate", "--config", &write_config(dir.path(), &text)], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(errors(&out).iter().any(|e| e.contains("repulsive")));
}

#[test]
fn unknown_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("t_end = 0.2", "t_end = 0.2\ntend = 1.0");
    let out = cli(&["validate", "--config", &write_config(dir.path(), &text)], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(errors(&out).iter().any(|e| e.contains("tend")), "{:?}", errors(&out));
}

#[test]
fn run_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let target = dir.path().join("result");
    let out = cli(&["run", "--config", &cfg, "--out", target.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(target.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "ok");
    assert!(target.join("timeseries.csv").exists());
}

#[test]
fn run_honours_output_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let root = dir.path().join("root");
    let out = cli(&["run", "--config", &cfg], Some(&root));
    assert!(out.status.success());
    assert!(root.join("tiny/manifest.json").exists());
}

#[test]
fn run_refuses_invalid_config() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("n = 128", "n = 4");
    let target = dir.path().join("result");
    let out = cli(&["run", "--config", &write_config(dir.path(), &text), "--out", target.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(!target.join("manifest.json").exists());
}

#[test]
fn profile_writes_profile_only() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("p");
    let out = cli(&["profile", "--config", &write_config(dir.path(), TINY), "--out", target.to_str().unwrap()], None);
    assert!(out.status.success());
    assert!(target.join("profile.csv").exists());
    assert!(!target.join("timeseries.csv").exists());
}

#[test]
fn missing_config_fails() {
    let out = cli(&["run"], None);
    assert!(!out.status.success());
}

use std::fs;
use std::path::Path;

use soliton_well::scenario::{self, fmt_f64, output_dir, ScenarioConfig, OUT_ENV};

const TINY: &str = r#"
name = "tiny"
lambda = -2.0
t_end = 0.5

[grid]
n = 256
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

[diagnostics]
fit_stride = 1
snapshot_stride = 2
reports = ["stationarity", "modulation"]

[outputs]
directory = "out/tiny"
"#;

fn tiny() -> ScenarioConfig {
    ScenarioConfig::from_toml(TINY).unwrap()
}

fn configs_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_parse_and_validate() {
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let (cfg, _) = ScenarioConfig::load(&path).unwrap();
        let errs = scenario::validate(&cfg);
        assert!(errs.is_empty(), "{}: {errs:?}", path.display());
    }
}

#[test]
fn tiny_config_is_valid() {
    assert_eq!(scenario::validate(&tiny()), Vec::<String>::new());
}

#[test]
fn unknown_keys_rejected() {
    let bad = TINY.replace("t_end = 0.5", "t_end = 0.5\nt_stop = 1.0");
    assert!(ScenarioConfig::from_toml(&bad).is_err());
    let bad = TINY.replace("n = 256", "n = 256\npoints = 3");
    assert!(ScenarioConfig::from_toml(&bad).is_err());
}

#[test]
fn repulsive_lambda_reported() {
    let mut cfg = tiny();
    cfg.lambda = 1.0;
    let errs = scenario::validate(&cfg);
    assert!(errs.iter().any(|e| e == "repulsive λ unsupported for soliton scenarios"), "{errs:?}");
}

#[test]
fn probe_inside_well_names_boundary() {
    let text = fs::read_to_string(configs_dir().join("truncated_well.toml")).unwrap();
    let text = text.replace("probes = [1.1,", "probes = [1.05,");
    let errs = scenario::validate(&ScenarioConfig::from_toml(&text).unwrap());
    assert!(errs.iter().any(|e| e.contains("x = 1.05") && e.contains("(1+δ)/ω")), "{errs:?}");
}

#[test]
fn several_problems_listed_together() {
    let mut cfg = tiny();
    cfg.lambda = 1.0;
    cfg.t_end = -1.0;
    cfg.grid.n = 8;
    assert!(scenario::validate(&cfg).len() >= 3);
}

#[test]
fn energy_and_mass_are_exclusive() {
    let mut cfg = tiny();
    cfg.soliton.mass = Some(2.0);
    assert!(cfg.target().is_err());
    assert!(!scenario::validate(&cfg).is_empty());
}

#[test]
fn output_dir_precedence() {
    let cfg = tiny();
    std::env::remove_var(OUT_ENV);
    assert_eq!(output_dir(&cfg, None), Path::new("out/tiny"));
    std::env::set_var(OUT_ENV, "/tmp/root");
    assert_eq!(output_dir(&cfg, None), Path::new("/tmp/root/tiny"));
    assert_eq!(output_dir(&cfg, Some(Path::new("cli"))), Path::new("cli"));
    std::env::remove_var(OUT_ENV);
}

#[test]
fn float_format_round_trips() {
    for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
        let s = fmt_f64(v);
        assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
    }
}

#[test]
fn run_writes_manifest_and_is_deterministic() {
    let cfg = tiny();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = scenario::run(&cfg, TINY, a.path()).unwrap();
    scenario::run(&cfg, TINY, b.path()).unwrap();

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["config_sha256"], scenario::sha256_hex(TINY.as_bytes()));
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), ra.manifest.files.len());
    for f in files {
        let rel = f["path"].as_str().unwrap();
        let bytes = fs::read(a.path().join(rel)).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), scenario::sha256_hex(&bytes), "{rel}");
        if rel.ends_with(".csv") {
            assert!(!bytes.contains(&b'\r'), "{rel} has CR line endings");
            // Every CSV must be identical across runs.
            assert_eq!(bytes, fs::read(b.path().join(rel)).unwrap(), "{rel} differs");
        }
    }
    let names: Vec<&str> = files.iter().map(|f| f["path"].as_str().unwrap()).collect();
    for want in ["config.toml", "timeseries.csv", "fits.csv"] {
        assert!(names.contains(&want), "missing {want} in {names:?}");
    }
    assert!(names.iter().any(|n| n.starts_with("snapshots/")));
    assert!(!a.path().join(scenario::FAILURE_MARKER).exists());

    let ts = fs::read_to_string(a.path().join("timeseries.csv")).unwrap();
    assert!(ts.starts_with("t,mass,energy,X,momentum,E_tot_classical\n"));
    assert_eq!(ts.lines().count(), 1 + 11);
}

#[test]
fn report_recomputes_from_snapshots() {
    let mut text = TINY.replace("snapshot_stride = 2", "snapshot_stride = 1");
    text = text.replace("reports = [\"stationarity\", \"modulation\"]", "reports = [\"stationarity\", \"hydro\"]");
    let cfg = ScenarioConfig::from_toml(&text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    scenario::run(&cfg, &text, dir.path()).unwrap();
    let m = scenario::report_from_snapshots(dir.path()).unwrap();
    assert_eq!(m.name, "tiny");
    assert!(!m.files.is_empty());
}

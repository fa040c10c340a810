//! Scenario files, validation and the run pipeline.
//!
//! A scenario is a TOML file; unknown keys are rejected. Outputs go to one
//! directory: `manifest.json`, `config.toml`, `timeseries.csv`, `fits.csv`,
//! `snapshots/*.csv` and `reports/*.json`.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{harmonic_benchmark, launch, Absorber, IntegratorConfig, Observables, Propagator, SimState};
use crate::error::{Error, Result};
use crate::grid::{ComplexField, Grid1D};
use crate::hydro::{hydro_residuals, RESIDUAL_RHO_FLOOR};
use crate::modulation::{
    chi_bound_check, energy_decay_rate, fit_modulation, gamma_dot_estimate, mass_flux, momentum_observable,
    trapped_eta_check, ChiBoundReport, CutoffSpec, EnergyDecayReport, FitSeed, GammaDotReport, ModulationFit,
    ProfileFamily, TrappedEtaReport,
};
use crate::potentials::{PotentialShape, PotentialSpec};
use crate::soliton::{solve_profile, ProfileTarget, SolitonProfile, SolverOptions};
use crate::tunneling::{run_experiment, suppression_check, Launch, TunnelingExperiment};
use crate::Complex64;

/// Environment variable overriding the output root.
pub const OUT_ENV: &str = "SOLITON_WELL_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub lambda: f64,
    pub t_end: f64,
    /// Reserved; the pipeline is deterministic.
    #[serde(default)]
    pub rng_seed: u64,
    pub grid: GridConfig,
    pub potential: PotentialSpec,
    pub soliton: SolitonConfig,
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub tunneling: Option<TunnelingConfig>,
    #[serde(default)]
    pub outputs: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub x_min: f64,
    pub x_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolitonConfig {
    /// Exactly one of `energy` and `mass`.
    #[serde(default)]
    pub energy: Option<f64>,
    #[serde(default)]
    pub mass: Option<f64>,
    /// Initial centre `X_m`.
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub velocity: f64,
    /// Use the closed-form sech profile (free potential only).
    #[serde(default)]
    pub analytic: bool,
    #[serde(default)]
    pub solver: SolverOptions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Stationarity,
    HarmonicBenchmark,
    Hydro,
    Modulation,
    Tunneling,
    Suppression,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Fit every `fit_stride`-th record; 0 disables fitting.
    pub fit_stride: usize,
    /// Write every `snapshot_stride`-th record; 0 disables snapshots.
    pub snapshot_stride: usize,
    pub probes: Vec<f64>,
    pub transient: f64,
    pub cutoffs: Vec<CutoffSpec>,
    /// Transition band `[a, b]`; defaults to `|x - 1/ω| ≤ δ/ω`.
    pub band: Option<[f64; 2]>,
    /// Probe of the energy-decay formula; defaults to `1/ω`.
    pub energy_probe: Option<f64>,
    pub reports: Vec<ReportKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TunnelingConfig {
    pub epsilon_sweep: Vec<f64>,
    /// Each sweep run lasts `horizon/(ωε)`; defaults to `δ`.
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub launch: Launch,
    #[serde(default)]
    pub suppression_epsilon: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: PathBuf::from("out"), formats: vec![Format::Csv, Format::Json] }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = fs::read_to_string(path)?;
        Ok((Self::from_toml(&text)?, text))
    }

    pub fn target(&self) -> Result<ProfileTarget> {
        match (self.soliton.energy, self.soliton.mass) {
            (Some(e), None) => Ok(ProfileTarget::Energy(e)),
            (None, Some(m)) => Ok(ProfileTarget::Mass(m)),
            _ => Err(Error::Config("soliton needs exactly one of `energy` and `mass`".into())),
        }
    }

    /// Drive amplitude: `|velocity|/ω` for a boosted launch, else `|offset|`.
    pub fn epsilon(&self) -> f64 {
        let omega = self.potential.omega().unwrap_or(1.0);
        if self.soliton.velocity != 0.0 {
            self.soliton.velocity.abs() / omega
        } else {
            self.soliton.offset.abs()
        }
    }

    fn well(&self) -> Option<(f64, f64)> {
        match self.potential.shape {
            PotentialShape::TruncatedWell { omega, delta, .. } => Some((omega, delta)),
            _ => None,
        }
    }

    pub fn band(&self) -> (f64, f64) {
        if let Some([a, b]) = self.diagnostics.band {
            return (a, b);
        }
        let (omega, delta) = self.well().unwrap_or((self.potential.omega().unwrap_or(1.0), 0.1));
        ((1.0 - delta) / omega, (1.0 + delta) / omega)
    }

    fn wants(&self, r: ReportKind) -> bool {
        self.diagnostics.reports.contains(&r)
    }
}

/// All problems found in a configuration; empty when it is usable.
pub fn validate(cfg: &ScenarioConfig) -> Vec<String> {
    let mut errs = Vec::new();
    let g = &cfg.grid;
    if g.n < 16 {
        errs.push(format!("grid.n = {} is below the minimum of 16", g.n));
    }
    if !(g.x_max > g.x_min && g.x_min.is_finite() && g.x_max.is_finite()) {
        errs.push(format!("grid bounds [{}, {}] are not an interval", g.x_min, g.x_max));
    }
    if cfg.lambda > 0.0 {
        errs.push("repulsive λ unsupported for soliton scenarios".into());
    } else if !(cfg.lambda < 0.0) {
        errs.push(format!("λ = {} admits no bright soliton", cfg.lambda));
    }
    if !(cfg.t_end > 0.0 && cfg.t_end.is_finite()) {
        errs.push(format!("t_end must be positive, got {}", cfg.t_end));
    }
    if let Err(e) = cfg.potential.validate() {
        errs.push(e.to_string());
    }
    if let Err(e) = cfg.target() {
        errs.push(e.to_string());
    }
    if cfg.soliton.analytic && cfg.potential.shape != PotentialShape::Free {
        errs.push("the analytic sech profile needs a free potential".into());
    }
    if let Err(e) = cfg.integrator.validate(&cfg.potential) {
        errs.push(e.to_string());
    }
    let half_width = (g.x_max).min(-g.x_min);
    if let Absorber::Mask { onset, .. } = cfg.integrator.absorber {
        if onset >= half_width {
            errs.push(format!("absorber onset {onset} lies outside the domain half-width {half_width}"));
        }
        for &p in &cfg.diagnostics.probes {
            if p.abs() >= onset {
                errs.push(format!("probe x = {p} lies inside the absorber (onset {onset})"));
            }
        }
    }
    if let Some((omega, delta)) = cfg.well() {
        let edge = (1.0 + delta) / omega;
        for &p in &cfg.diagnostics.probes {
            if p.abs() < edge {
                errs.push(format!("probe x = {p} lies inside the well; probes must satisfy |x| ≥ (1+δ)/ω = {edge}"));
            }
        }
    }
    for &p in &cfg.diagnostics.probes {
        if !(p > g.x_min && p < g.x_max) {
            errs.push(format!("probe x = {p} lies outside the grid"));
        }
    }
    let [a, b] = cfg.diagnostics.band.unwrap_or([0.0, 1.0]);
    if !(b > a) {
        errs.push(format!("band [{a}, {b}] is empty"));
    }
    if cfg.wants(ReportKind::HarmonicBenchmark) && !matches!(cfg.potential.shape, PotentialShape::Harmonic { .. }) {
        errs.push("harmonic_benchmark needs a harmonic potential".into());
    }
    let needs_fits = cfg.wants(ReportKind::Modulation);
    if needs_fits && cfg.diagnostics.fit_stride == 0 {
        errs.push("the modulation report needs fit_stride ≥ 1".into());
    }
    if cfg.wants(ReportKind::Tunneling) || cfg.wants(ReportKind::Suppression) {
        if cfg.well().is_none() {
            errs.push("tunneling reports need a truncated well".into());
        }
        match &cfg.tunneling {
            None => errs.push("tunneling reports need a [tunneling] table".into()),
            Some(t) => {
                if t.epsilon_sweep.is_empty() && cfg.wants(ReportKind::Tunneling) {
                    errs.push("epsilon_sweep is empty".into());
                }
                if t.epsilon_sweep.iter().any(|&e| !(e > 0.0)) {
                    errs.push("epsilon_sweep values must be positive".into());
                }
                if cfg.wants(ReportKind::Tunneling) && cfg.diagnostics.probes.is_empty() {
                    errs.push("tunneling report needs at least one probe".into());
                }
                if cfg.diagnostics.probes.windows(2).any(|w| w[1] <= w[0]) {
                    errs.push("probes must be strictly ascending".into());
                }
            }
        }
    }
    errs
}

/// Where a run writes: `--out`, else `$SOLITON_WELL_OUT/<name>`, else the config's directory.
pub fn output_dir(cfg: &ScenarioConfig, cli_out: Option<&Path>) -> PathBuf {
    if let Some(p) = cli_out {
        return p.to_path_buf();
    }
    if let Ok(root) = std::env::var(OUT_ENV) {
        if !root.is_empty() {
            return Path::new(&root).join(&cfg.name);
        }
    }
    cfg.outputs.directory.clone()
}

/// Writes files under a root and remembers their checksums.
pub struct OutputWriter {
    root: PathBuf,
    files: Vec<FileEntry>,
    formats: Vec<Format>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Round-trip float formatting used in every CSV.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl OutputWriter {
    pub fn new(root: &Path, formats: &[Format]) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new(), formats: formats.to_vec() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.files.retain(|f| f.path != rel);
        self.files.push(FileEntry { path: rel.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        if !self.formats.contains(&Format::Json) {
            return Ok(());
        }
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(rel, text.as_bytes())
    }

    pub fn write_csv(&mut self, rel: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        if !self.formats.contains(&Format::Csv) {
            return Ok(());
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.iter().map(|&v| fmt_f64(v)))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        self.write_bytes(rel, &bytes)
    }

    /// Lists every written file with its checksum.
    pub fn write_manifest(&mut self, manifest: &Manifest) -> Result<()> {
        let mut text = serde_json::to_string_pretty(manifest)?;
        text.push('\n');
        fs::write(self.root.join("manifest.json"), text)?;
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub status: String,
    pub error: Option<String>,
    pub config_sha256: String,
    pub versions: Versions,
    pub wall_time_s: f64,
    pub files: Vec<FileEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Versions {
    pub soliton_well: String,
    pub os: String,
    pub arch: String,
}

impl Versions {
    pub fn current() -> Self {
        Self {
            soliton_well: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
        }
    }
}

/// Name of the marker written when a run aborts.
pub const FAILURE_MARKER: &str = "FAILED";

/// Summary returned by [`run`].
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
}

/// Validates, runs the pipeline and writes every artifact plus the manifest.
/// A runtime failure leaves the partial outputs, a failure marker and a
/// manifest with status `failed`.
pub fn run(cfg: &ScenarioConfig, config_text: &str, out_dir: &Path) -> Result<RunOutcome> {
    let errs = validate(cfg);
    if !errs.is_empty() {
        return Err(Error::Config(errs.join("; ")));
    }
    let start = Instant::now();
    let mut w = OutputWriter::new(out_dir, &cfg.outputs.formats)?;
    let _ = fs::remove_file(out_dir.join(FAILURE_MARKER));
    w.write_bytes("config.toml", config_text.as_bytes())?;
    let result = pipeline(cfg, &mut w);
    let manifest = Manifest {
        name: cfg.name.clone(),
        status: if result.is_ok() { "ok" } else { "failed" }.into(),
        error: result.as_ref().err().map(|e| e.to_string()),
        config_sha256: sha256_hex(config_text.as_bytes()),
        versions: Versions::current(),
        wall_time_s: start.elapsed().as_secs_f64(),
        files: w.files().to_vec(),
    };
    if let Err(e) = &result {
        fs::write(out_dir.join(FAILURE_MARKER), format!("{e}\n"))?;
    }
    w.write_manifest(&manifest)?;
    result.map(|_| RunOutcome { out_dir: out_dir.to_path_buf(), manifest })
}

pub fn build_grid(cfg: &ScenarioConfig) -> Result<Arc<Grid1D>> {
    Grid1D::new(cfg.grid.n, cfg.grid.x_min, cfg.grid.x_max)
}

/// Stationary profile of the scenario.
pub fn build_profile(cfg: &ScenarioConfig) -> Result<SolitonProfile> {
    let grid = build_grid(cfg)?;
    if cfg.soliton.analytic {
        let e = cfg.soliton.energy.ok_or_else(|| Error::Config("the analytic profile needs `energy`".into()))?;
        return SolitonProfile::free_sech(grid, e, cfg.lambda);
    }
    solve_profile(&cfg.potential, cfg.lambda, cfg.target()?, &grid, &cfg.soliton.solver)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProfileReport {
    pub e: f64,
    pub lambda: f64,
    pub mass: f64,
    pub residual: f64,
    pub iterations: usize,
    pub width: crate::soliton::Width,
}

/// Solves the profile only and writes `profile.csv` and `reports/profile.json`.
pub fn write_profile(cfg: &ScenarioConfig, w: &mut OutputWriter) -> Result<SolitonProfile> {
    let p = build_profile(cfg)?;
    let g = p.grid();
    let rows: Vec<Vec<f64>> = (0..g.n())
        .map(|i| vec![g.x(i), p.s.values()[i], p.ds_de.as_ref().map_or(f64::NAN, |d| d.values()[i])])
        .collect();
    w.write_csv("profile.csv", &["x", "S", "dS_dE"], &rows)?;
    w.write_json(
        "reports/profile.json",
        &ProfileReport {
            e: p.e,
            lambda: p.lambda,
            mass: p.mass(),
            residual: p.residual,
            iterations: p.history.len(),
            width: p.width(),
        },
    )?;
    Ok(p)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StationarityReport {
    /// `max_t ‖|ψ(t)| - |ψ(0)|‖∞`.
    pub modulus_drift: f64,
    /// `max_t |N(t) - N(0)| / N(0)`.
    pub mass_drift: f64,
    pub t_end: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HydroReport {
    pub snapshots: usize,
    pub interior_points: usize,
    pub max_continuity: f64,
    pub max_euler: f64,
}

/// Points trimmed from each mask edge before taking hydrodynamic residual norms.
pub const HYDRO_INTERIOR: usize = 8;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentumEnvelope {
    pub cutoff: CutoffSpec,
    pub period: f64,
    /// Largest `|(v/2)⟨S, F²S⟩|` over each full period.
    pub envelope: Vec<f64>,
    /// Largest `env[k+1]/env[k]`.
    pub max_growth: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergyMonotonicity {
    /// Fraction of consecutive fits with `E` increasing.
    pub violation_fraction: f64,
    /// Largest increase divided by twice the fit residual at that sample.
    pub worst_ratio: f64,
    /// Fraction of post-transient `Ė_measured` samples that are positive.
    pub positive_edot_fraction: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModulationReport {
    pub fits: usize,
    pub band: (f64, f64),
    pub epsilon: f64,
    pub max_condition: f64,
    pub max_residual: f64,
    pub max_relative_residual: f64,
    pub sup_chi_band: f64,
    pub sup_chi_window: f64,
    pub trapped_eta: Option<TrappedEtaReport>,
    pub chi_bound: Option<ChiBoundReport>,
    pub energy_decay: Option<EnergyDecayReport>,
    pub energy_monotonicity: Option<EnergyMonotonicity>,
    pub gamma_dot: Option<GammaDotReport>,
    pub momentum: Vec<MomentumEnvelope>,
    pub notes: Vec<String>,
}

fn record_row(o: &Observables) -> Vec<f64> {
    vec![o.t, o.mass, o.energy, o.center, o.momentum, o.e_tot_classical]
}

fn snapshot_rows(psi: &ComplexField) -> Vec<Vec<f64>> {
    let g = psi.grid();
    psi.values().iter().enumerate().map(|(i, z)| vec![g.x(i), z.re, z.im]).collect()
}

fn pipeline(cfg: &ScenarioConfig, w: &mut OutputWriter) -> Result<()> {
    let profile = write_profile(cfg, w)?;
    let grid = profile.grid().clone();
    let psi0 = launch(&profile, cfg.soliton.offset, cfg.soliton.velocity)?;
    let prop = Propagator::new(&grid, &cfg.potential, cfg.lambda, &cfg.integrator)?;

    let want_fits = cfg.diagnostics.fit_stride > 0;
    let family = if want_fits { Some(ProfileFamily::new(profile.clone())?) } else { None };
    let keep_series = cfg.wants(ReportKind::Hydro);
    let modulus0: Vec<f64> = psi0.values().iter().map(|z| z.norm()).collect();
    let mass0 = psi0.norm_sq();
    let mut stationarity = StationarityReport { modulus_drift: 0.0, mass_drift: 0.0, t_end: cfg.t_end };
    let mut series: Vec<(f64, ComplexField)> = Vec::new();
    let mut fits: Vec<ModulationFit> = Vec::new();
    let mut fit_extras: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut seed = FitSeed::initial(profile.e, cfg.soliton.offset, cfg.soliton.velocity);
    let mut record = 0usize;
    let outer_probe = cfg.diagnostics.probes.last().copied();
    let mut snapshot_error = None;

    let evolved = prop.evolve(SimState::new(psi0), cfg.t_end, Some(profile.e), |st| {
        let psi = &st.psi;
        let drift = psi.values().iter().zip(&modulus0).fold(0.0f64, |m, (z, a)| m.max((z.norm() - a).abs()));
        stationarity.modulus_drift = stationarity.modulus_drift.max(drift);
        stationarity.mass_drift = stationarity.mass_drift.max((psi.norm_sq() - mass0).abs() / mass0);
        if keep_series {
            series.push((st.t, psi.clone()));
        }
        let stride = cfg.diagnostics.snapshot_stride;
        if stride > 0 && record % stride == 0 {
            if let Err(e) = w.write_csv(&format!("snapshots/snap_{record:06}.csv"), &["x", "re", "im"], &snapshot_rows(psi)) {
                snapshot_error = Some(e.to_string());
            }
        }
        if let Some(fam) = &family {
            if record % cfg.diagnostics.fit_stride == 0 {
                let fit = fit_modulation(psi, st.t, fam, &seed)?;
                seed = fit.seed();
                let flux = match outer_probe {
                    Some(x) => mass_flux(psi, x)?,
                    None => f64::NAN,
                };
                let mut pf = Vec::new();
                for c in &cfg.diagnostics.cutoffs {
                    pf.push(momentum_observable(psi, c, Some((&fit.s, fit.boost)))?);
                }
                fit_extras.push((flux, pf.iter().map(|m| m.p_f).chain(pf.iter().map(|m| m.soliton_frame.unwrap_or(f64::NAN))).collect()));
                fits.push(fit);
            }
        }
        record += 1;
        Ok(())
    });
    // Write what exists even if the evolution failed.
    let write_partial = |w: &mut OutputWriter, obs: &[Observables]| -> Result<()> {
        let rows: Vec<Vec<f64>> = obs.iter().map(record_row).collect();
        w.write_csv("timeseries.csv", &["t", "mass", "energy", "X", "momentum", "E_tot_classical"], &rows)
    };
    let (_, observables) = match evolved {
        Ok(v) => v,
        Err(e) => {
            write_fits(cfg, w, &fits, &fit_extras, None)?;
            return Err(e);
        }
    };
    write_partial(w, &observables)?;
    if let Some(e) = snapshot_error {
        return Err(Error::Config(format!("snapshot write failed: {e}")));
    }

    if cfg.wants(ReportKind::Stationarity) {
        w.write_json("reports/stationarity.json", &stationarity)?;
    }
    if cfg.wants(ReportKind::HarmonicBenchmark) {
        let omega = cfg.potential.omega().expect("validated harmonic");
        let rep = harmonic_benchmark(omega, cfg.soliton.offset, &profile, cfg.t_end, &cfg.integrator)?;
        w.write_json("reports/benchmark_report.json", &rep)?;
    }
    if cfg.wants(ReportKind::Hydro) {
        let rep = hydro_report(&series, &cfg.potential, cfg.lambda)?;
        w.write_json("reports/hydro.json", &rep)?;
    }
    let modulation = if cfg.wants(ReportKind::Modulation) {
        let rep = modulation_report(cfg, &fits)?;
        w.write_json("reports/modulation.json", &rep)?;
        Some(rep)
    } else {
        None
    };
    write_fits(cfg, w, &fits, &fit_extras, modulation.as_ref())?;
    if cfg.wants(ReportKind::Tunneling) {
        let t = cfg.tunneling.as_ref().expect("validated");
        let (_, delta) = cfg.well().expect("validated");
        let exp = TunnelingExperiment {
            profile: profile.clone(),
            integrator: cfg.integrator.clone(),
            launch: t.launch,
            probes: cfg.diagnostics.probes.clone(),
            epsilon_sweep: t.epsilon_sweep.clone(),
            horizon: t.horizon.unwrap_or(delta),
            transient: cfg.diagnostics.transient,
        };
        let rep = run_experiment(&exp)?;
        let rows: Vec<Vec<f64>> = rep.overlay.iter().map(|r| vec![r.epsilon, r.probe, r.t, r.v_meas, r.v_pred]).collect();
        w.write_csv("overlay.csv", &["epsilon", "probe", "t", "v_meas", "v_pred"], &rows)?;
        w.write_json("reports/tunneling.json", &rep)?;
    }
    if cfg.wants(ReportKind::Suppression) {
        let t = cfg.tunneling.as_ref().expect("validated");
        let eps = t.suppression_epsilon.unwrap_or_else(|| cfg.epsilon());
        let rep = suppression_check(&profile, &cfg.integrator, t.launch, eps)?;
        w.write_json("reports/suppression.json", &rep)?;
    }
    Ok(())
}

pub fn hydro_report(series: &[(f64, ComplexField)], potential: &PotentialSpec, lambda: f64) -> Result<HydroReport> {
    let res = hydro_residuals(series, potential, lambda, RESIDUAL_RHO_FLOOR)?;
    let (mut c, mut e) = (0.0f64, 0.0f64);
    for r in &res {
        let (a, b) = r.norms(HYDRO_INTERIOR);
        c = c.max(a);
        e = e.max(b);
    }
    Ok(HydroReport { snapshots: res.len(), interior_points: HYDRO_INTERIOR, max_continuity: c, max_euler: e })
}

fn write_fits(
    cfg: &ScenarioConfig,
    w: &mut OutputWriter,
    fits: &[ModulationFit],
    extras: &[(f64, Vec<f64>)],
    report: Option<&ModulationReport>,
) -> Result<()> {
    if fits.is_empty() {
        return Ok(());
    }
    let band = cfg.band();
    let edot = report.and_then(|r| r.energy_decay.as_ref());
    let rows: Vec<Vec<f64>> = fits
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let eta_mode = trapped_eta_check(std::slice::from_ref(f), band).map(|r| r.mode).unwrap_or(f64::NAN);
            let (em, emod) = match edot {
                Some(d) if k >= 1 && k + 1 < fits.len() => (d.edot_measured[k - 1], d.edot_model[k - 1]),
                _ => (f64::NAN, f64::NAN),
            };
            let (flux, pf) = &extras[k];
            vec![
                f.t,
                f.x,
                f.e,
                f.gamma,
                f.residual,
                f.sup_chi(band).max(f.sup_chi((-band.1, -band.0))),
                eta_mode,
                em,
                emod,
                *flux,
                pf.first().copied().unwrap_or(f64::NAN),
            ]
        })
        .collect();
    w.write_csv(
        "fits.csv",
        &["t", "X", "E", "gamma", "residual", "sup_chi", "eta_mode", "Edot_measured", "Edot_model", "flux", "p_F"],
        &rows,
    )
}

/// Oscillation period from the zero crossings of `X(t) - mean`, if at least
/// two crossings are seen.
fn crossing_period(times: &[f64], xs: &[f64]) -> Option<f64> {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let mut crossings = Vec::new();
    for k in 1..xs.len() {
        let (a, b) = (xs[k - 1] - mean, xs[k] - mean);
        if a == 0.0 || a.signum() != b.signum() {
            let t = times[k - 1] + (times[k] - times[k - 1]) * a / (a - b);
            crossings.push(t);
        }
    }
    if crossings.len() < 3 {
        return None;
    }
    Some(2.0 * (crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as f64)
}

pub fn momentum_envelope(fits: &[ModulationFit], cutoff: &CutoffSpec, omega: f64) -> Result<MomentumEnvelope> {
    let times: Vec<f64> = fits.iter().map(|f| f.t).collect();
    let xs: Vec<f64> = fits.iter().map(|f| f.x).collect();
    let period = crossing_period(&times, &xs).unwrap_or(2.0 * PI / omega);
    let g = fits[0].s.grid().clone();
    let f = cutoff.samples(&g)?;
    let values: Vec<f64> = fits
        .iter()
        .map(|fit| {
            0.5 * fit.boost
                * fit.s.values().iter().zip(f.values()).map(|(s, w)| (w * s).powi(2)).sum::<f64>()
                * g.dx()
        })
        .collect();
    let t0 = times[0];
    let periods = ((times[times.len() - 1] - t0) / period).floor() as usize;
    let envelope: Vec<f64> = (0..periods)
        .map(|k| {
            let (a, b) = (t0 + k as f64 * period, t0 + (k + 1) as f64 * period);
            times.iter().zip(&values).filter(|(t, _)| **t >= a && **t < b).fold(0.0f64, |m, (_, v)| m.max(v.abs()))
        })
        .collect();
    let max_growth = envelope.windows(2).map(|w| w[1] / w[0]).fold(f64::NEG_INFINITY, f64::max);
    Ok(MomentumEnvelope { cutoff: cutoff.clone(), period, envelope, max_growth })
}

pub fn energy_monotonicity(fits: &[ModulationFit], edot: Option<&EnergyDecayReport>, transient: f64) -> EnergyMonotonicity {
    let mut violations = 0usize;
    let mut worst = 0.0f64;
    for k in 1..fits.len() {
        let inc = fits[k].e - fits[k - 1].e;
        if inc > 0.0 {
            violations += 1;
            worst = worst.max(inc / (2.0 * fits[k].residual.max(fits[k - 1].residual)));
        }
    }
    let positive_edot_fraction = edot
        .map(|d| {
            let post: Vec<f64> =
                d.edot_measured.iter().zip(&d.times[1..]).filter(|(_, t)| **t > transient).map(|(e, _)| *e).collect();
            if post.is_empty() {
                f64::NAN
            } else {
                post.iter().filter(|e| **e > 0.0).count() as f64 / post.len() as f64
            }
        })
        .unwrap_or(f64::NAN);
    EnergyMonotonicity {
        violation_fraction: if fits.len() > 1 { violations as f64 / (fits.len() - 1) as f64 } else { f64::NAN },
        worst_ratio: worst,
        positive_edot_fraction,
    }
}

pub fn modulation_report(cfg: &ScenarioConfig, fits: &[ModulationFit]) -> Result<ModulationReport> {
    if fits.is_empty() {
        return Err(Error::InsufficientSamples("no modulation fits".into()));
    }
    let band = cfg.band();
    let omega = cfg.potential.omega().unwrap_or(1.0);
    let delta = cfg.well().map_or(0.1, |w| w.1);
    let epsilon = cfg.epsilon();
    let mut notes = Vec::new();
    let psi_norm = |f: &ModulationFit| -> f64 {
        let g = f.s.grid();
        f.r.values().iter().zip(f.s.values()).map(|(r, s)| (r + s).norm_sqr()).sum::<f64>().sqrt() * g.dx().sqrt()
    };
    let trapped_eta = trapped_eta_check(fits, band).map_err(|e| notes.push(format!("trapped η: {e}"))).ok();
    let chi_bound = (epsilon > 0.0).then(|| chi_bound_check(fits, epsilon, omega, delta, band));
    let probe = cfg.diagnostics.energy_probe.unwrap_or(1.0 / omega);
    let energy_decay = energy_decay_rate(fits, probe).map_err(|e| notes.push(format!("energy decay: {e}"))).ok();
    let energy_monotonicity = Some(energy_monotonicity(fits, energy_decay.as_ref(), cfg.diagnostics.transient));
    let gamma_dot =
        gamma_dot_estimate(fits, &cfg.potential, cfg.lambda).map_err(|e| notes.push(format!("γ̇: {e}"))).ok();
    let mut momentum = Vec::new();
    for c in &cfg.diagnostics.cutoffs {
        match momentum_envelope(fits, c, omega) {
            Ok(m) => momentum.push(m),
            Err(e) => notes.push(format!("momentum envelope: {e}")),
        }
    }
    Ok(ModulationReport {
        fits: fits.len(),
        band,
        epsilon,
        max_condition: fits.iter().flat_map(|f| f.conditions.iter()).fold(0.0f64, |m, c| m.max(c.abs())),
        max_residual: fits.iter().fold(0.0f64, |m, f| m.max(f.residual)),
        max_relative_residual: fits.iter().fold(0.0f64, |m, f| m.max(f.residual / psi_norm(f))),
        sup_chi_band: fits.iter().fold(0.0f64, |m, f| m.max(f.sup_chi(band)).max(f.sup_chi((-band.1, -band.0)))),
        sup_chi_window: fits.iter().fold(0.0f64, |m, f| m.max(f.sup_chi((f64::NEG_INFINITY, f64::INFINITY)))),
        trapped_eta,
        chi_bound,
        energy_decay,
        energy_monotonicity,
        gamma_dot,
        momentum,
        notes,
    })
}

/// Reads `snapshots/*.csv` from a finished run, sorted by record index.
pub fn read_snapshots(dir: &Path, grid: &Arc<Grid1D>, dt_record: f64) -> Result<Vec<(f64, ComplexField)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir.join("snapshots"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let index: usize = stem
            .trim_start_matches("snap_")
            .parse()
            .map_err(|_| Error::Config(format!("unexpected snapshot name {}", p.display())))?;
        let mut r = csv::Reader::from_path(&p)?;
        let mut values = Vec::with_capacity(grid.n());
        for rec in r.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Config(format!("bad number in {}", p.display())))
            };
            values.push(Complex64::new(parse(1)?, parse(2)?));
        }
        if values.len() != grid.n() {
            return Err(Error::GridMismatch);
        }
        out.push((index as f64 * dt_record, ComplexField::new(grid.clone(), values)?));
    }
    Ok(out)
}

/// Recomputes the modulation and hydrodynamic reports of a finished run from
/// its stored config and snapshots, writing `reports/offline_*.json`.
pub fn report_from_snapshots(dir: &Path) -> Result<Manifest> {
    let start = Instant::now();
    let (cfg, text) = ScenarioConfig::load(&dir.join("config.toml"))?;
    let mut w = OutputWriter::new(dir, &[Format::Json])?;
    let manifest_path = dir.join("manifest.json");
    if let Ok(old) = fs::read_to_string(&manifest_path) {
        let old: Manifest = serde_json::from_str(&old)?;
        w.files = old.files;
    }
    let stride = cfg.diagnostics.snapshot_stride.max(1);
    let dt_record = cfg.integrator.dt * (cfg.integrator.record_every * stride) as f64;
    let profile = build_profile(&cfg)?;
    let snaps = read_snapshots(dir, profile.grid(), dt_record)?;
    if snaps.is_empty() {
        return Err(Error::InsufficientSamples("no snapshots stored".into()));
    }
    let family = ProfileFamily::new(profile.clone())?;
    let mut seed = FitSeed::initial(profile.e, cfg.soliton.offset, cfg.soliton.velocity);
    let mut fits = Vec::new();
    for (t, psi) in &snaps {
        let f = fit_modulation(psi, *t, &family, &seed)?;
        seed = f.seed();
        fits.push(f);
    }
    w.write_json("reports/offline_modulation.json", &modulation_report(&cfg, &fits)?)?;
    if snaps.len() >= 3 {
        w.write_json("reports/offline_hydro.json", &hydro_report(&snaps, &cfg.potential, cfg.lambda)?)?;
    }
    let manifest = Manifest {
        name: cfg.name.clone(),
        status: "ok".into(),
        error: None,
        config_sha256: sha256_hex(text.as_bytes()),
        versions: Versions::current(),
        wall_time_s: start.elapsed().as_secs_f64(),
        files: w.files().to_vec(),
    };
    w.write_manifest(&manifest)?;
    Ok(manifest)
}

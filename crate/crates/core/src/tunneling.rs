//! Outflow past the truncated well compared with the characteristic solution.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{launch, IntegratorConfig, Propagator, SimState};
use crate::error::{Error, Result};
use crate::grid::{Grid1D, Method};
use crate::hydro::{burgers_velocity, suppression_timescale, BurgersParams};
use crate::potentials::{affine_fit, PotentialShape, PotentialSpec, TransitionForce};
use crate::soliton::SolitonProfile;

/// How the soliton is set in motion with amplitude `ε`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Launch {
    /// `X(0) = 0`, `Ẋ(0) = εω`.
    #[default]
    Velocity,
    /// `X(0) = ε`, `Ẋ(0) = 0`.
    Offset,
}

impl Launch {
    /// `(x0, velocity)` for amplitude `epsilon`.
    pub fn initial(self, epsilon: f64, omega: f64) -> (f64, f64) {
        match self {
            Launch::Velocity => (0.0, epsilon * omega),
            Launch::Offset => (epsilon, 0.0),
        }
    }
}

/// Overlay comparisons use only samples with `ρ > RHO_RELATIVE_FLOOR·max ρ`.
pub const RHO_RELATIVE_FLOOR: f64 = 1e-8;
/// `v_noise` is this multiple of the control run's largest `|v|`.
pub const NOISE_FACTOR: f64 = 10.0;

#[derive(Clone, Debug)]
pub struct TunnelingExperiment {
    pub profile: SolitonProfile,
    pub integrator: IntegratorConfig,
    pub launch: Launch,
    /// Sorted, all at or beyond `(1+δ)/ω`.
    pub probes: Vec<f64>,
    pub epsilon_sweep: Vec<f64>,
    /// Each run lasts `horizon/(ωε)`.
    pub horizon: f64,
    /// Samples with `t ≤ transient` are excluded from the sign test.
    pub transient: f64,
}

/// Time series at one probe.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ProbeSeries {
    pub x: f64,
    pub rho: Vec<f64>,
    /// Madelung velocity `2 ∂x arg ψ`.
    pub v: Vec<f64>,
    /// `v - Ẋ`.
    pub v_detrended: Vec<f64>,
    /// `2 Im(ψ* ∂x ψ)`.
    pub flux: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub epsilon: f64,
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    /// `2⟨p⟩/N`.
    pub center_velocity: Vec<f64>,
    pub probes: Vec<ProbeSeries>,
    pub max_rho: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OverlayRow {
    pub epsilon: f64,
    pub probe: f64,
    pub t: f64,
    pub v_meas: f64,
    pub v_pred: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpsilonSummary {
    pub epsilon: f64,
    pub t_end: f64,
    pub suppressed: bool,
    pub samples: usize,
    pub negative_fraction: f64,
    pub min_outer_flux: f64,
    pub peak_v: Vec<f64>,
    pub onset_times: Vec<Option<f64>>,
    /// Slope of `log t_onset` against `log(x - x_edge)`.
    pub onset_slope: Option<f64>,
    pub overlay_samples: usize,
    /// Median `|log₁₀(v_meas/v_pred)|` where both exceed `v_noise`.
    pub overlay_median_log_error: Option<f64>,
    pub mass_lost: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TunnelingReport {
    pub force: TransitionForce,
    pub x_edge: f64,
    pub probes: Vec<f64>,
    pub v_noise: f64,
    pub detrending: String,
    pub runs: Vec<EpsilonSummary>,
    /// Slope of `log max_t v` at the first probe against `log ε`.
    pub epsilon_slope: Option<f64>,
    /// Mean of the per-ε onset slopes.
    pub onset_slope: Option<f64>,
    /// Slope of `log t_front` against `log ε`, `t_front` being the onset at the first probe.
    pub front_slope: Option<f64>,
    /// "suppressed" when nothing reached any probe, otherwise "tunneling".
    pub status: String,
    #[serde(skip)]
    pub overlay: Vec<OverlayRow>,
    #[serde(skip)]
    pub records: Vec<RunRecord>,
}

fn well(potential: &PotentialSpec) -> Result<(f64, f64)> {
    match potential.shape {
        PotentialShape::TruncatedWell { omega, delta, .. } => Ok((omega, delta)),
        _ => Err(Error::InvalidParameter("tunneling experiments need a truncated well".into())),
    }
}

impl TunnelingExperiment {
    pub fn validate(&self) -> Result<()> {
        let (omega, delta) = well(&self.profile.potential)?;
        let x_edge = (1.0 + delta) / omega;
        if self.probes.is_empty() {
            return Err(Error::InvalidParameter("at least one probe is required".into()));
        }
        if self.probes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("probes must be strictly ascending".into()));
        }
        for &x in &self.probes {
            if x < x_edge {
                return Err(Error::InsideWell { x, x_edge });
            }
        }
        let g = self.profile.grid();
        let last = *self.probes.last().unwrap();
        if let crate::dynamics::Absorber::Mask { onset, .. } = self.integrator.absorber {
            if last >= onset {
                return Err(Error::InvalidParameter(format!("probe {last} lies inside the absorber (onset {onset})")));
            }
        }
        if last >= g.x_max() {
            return Err(Error::ProbeOutside { x: last });
        }
        if self.epsilon_sweep.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidParameter("sweep amplitudes must be positive".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidParameter("horizon must be positive".into()));
        }
        for &e in &self.epsilon_sweep {
            if e > 0.3 {
                log::warn!("ε = {e} is outside the small-amplitude regime");
            }
        }
        if self.horizon > delta * (1.0 + 1e-12) {
            log::warn!("horizon {} extends past the validity time δ/(ωε)", self.horizon);
        }
        Ok(())
    }

    pub fn t_end(&self, epsilon: f64) -> Result<f64> {
        let (omega, _) = well(&self.profile.potential)?;
        Ok(self.horizon / (omega * epsilon))
    }
}

/// Evolves from the launched profile to `t_end`, sampling the probes.
pub fn simulate(
    profile: &SolitonProfile,
    cfg: &IntegratorConfig,
    launch_mode: Launch,
    epsilon: f64,
    probes: &[f64],
    t_end: f64,
) -> Result<RunRecord> {
    let omega = profile.potential.omega().unwrap_or(1.0);
    let (x0, v0) = launch_mode.initial(epsilon, omega);
    let psi0 = launch(profile, x0, v0)?;
    let g: Arc<Grid1D> = profile.grid().clone();
    let prop = Propagator::new(&g, &profile.potential, profile.lambda, cfg)?;
    let mut series: Vec<ProbeSeries> = probes.iter().map(|&x| ProbeSeries { x, ..Default::default() }).collect();
    let mut max_rho = 0.0f64;
    let (_, obs) = prop.evolve(SimState::new(psi0), t_end, None, |st| {
        let d = st.psi.derivative(1, Method::Spectral)?;
        max_rho = max_rho.max(st.psi.max_abs().powi(2));
        for p in series.iter_mut() {
            let z = st.psi.interpolate(p.x)?;
            let dz = d.interpolate(p.x)?;
            let rho = z.norm_sqr();
            let j = 2.0 * (z.conj() * dz).im;
            p.rho.push(rho);
            p.flux.push(j);
            p.v.push(if rho > 0.0 { j / rho } else { 0.0 });
        }
        Ok(())
    })?;
    let center_velocity: Vec<f64> = obs.iter().map(|o| 2.0 * o.momentum / o.mass).collect();
    for p in series.iter_mut() {
        p.v_detrended = p.v.iter().zip(&center_velocity).map(|(v, u)| v - u).collect();
    }
    Ok(RunRecord {
        epsilon,
        times: obs.iter().map(|o| o.t).collect(),
        mass: obs.iter().map(|o| o.mass).collect(),
        center_velocity,
        probes: series,
        max_rho,
    })
}

fn slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let s = affine_fit(&pts).0;
    s.is_finite().then_some(s)
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len() / 2;
    Some(if v.len() % 2 == 0 { 0.5 * (v[m - 1] + v[m]) } else { v[m] })
}

/// Runs the ε = 0 control and every sweep member (in parallel), then compares
/// the detrended probe velocities with the characteristic prediction.
pub fn run_experiment(exp: &TunnelingExperiment) -> Result<TunnelingReport> {
    exp.validate()?;
    let (omega, delta) = well(&exp.profile.potential)?;
    let force = exp.profile.potential.transition_force_coefficients()?;
    let x_edge = (1.0 + delta) / omega;
    let t_max = exp.epsilon_sweep.iter().map(|&e| exp.t_end(e)).collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);

    let control = simulate(&exp.profile, &exp.integrator, exp.launch, 0.0, &exp.probes, t_max)?;
    let v_noise = NOISE_FACTOR
        * control.probes.iter().flat_map(|p| p.v_detrended.iter()).fold(0.0f64, |m, v| m.max(v.abs()));

    let records: Vec<RunRecord> = exp
        .epsilon_sweep
        .par_iter()
        .map(|&eps| simulate(&exp.profile, &exp.integrator, exp.launch, eps, &exp.probes, exp.t_end(eps)?))
        .collect::<Result<_>>()?;

    let mut runs = Vec::new();
    let mut overlay = Vec::new();
    for rec in &records {
        let params = BurgersParams::new(force.alpha0, force.beta0, omega, rec.epsilon, delta)?;
        let floor = RHO_RELATIVE_FLOOR * rec.max_rho;
        let mut samples = 0usize;
        let mut negative = 0usize;
        let mut log_errors = Vec::new();
        let mut peak_v = Vec::new();
        let mut onset_times = Vec::new();
        let mut any_signal = false;
        for p in &rec.probes {
            let mut peak = f64::NEG_INFINITY;
            let mut onset = None;
            for (k, &t) in rec.times.iter().enumerate() {
                if p.rho[k] <= floor {
                    continue;
                }
                any_signal = true;
                let v = p.v_detrended[k];
                peak = peak.max(v);
                if onset.is_none() && v > v_noise {
                    onset = Some(t);
                }
                if t > exp.transient {
                    samples += 1;
                    if v < -v_noise {
                        negative += 1;
                    }
                }
                let v_pred = burgers_velocity(&params, p.x, t)?;
                overlay.push(OverlayRow { epsilon: rec.epsilon, probe: p.x, t, v_meas: v, v_pred });
                if v > v_noise && v_pred > v_noise {
                    log_errors.push((v / v_pred).log10().abs());
                }
            }
            peak_v.push(peak);
            onset_times.push(onset);
        }
        let onset_pts: Vec<(f64, f64)> = exp
            .probes
            .iter()
            .zip(&onset_times)
            .filter_map(|(&x, t)| t.map(|t| (x - x_edge, t)))
            .collect();
        let outer = rec.probes.last().unwrap();
        let min_outer_flux = rec
            .times
            .iter()
            .zip(&outer.flux)
            .filter(|(t, _)| **t > exp.transient)
            .fold(f64::INFINITY, |m, (_, j)| m.min(*j));
        runs.push(EpsilonSummary {
            epsilon: rec.epsilon,
            t_end: *rec.times.last().unwrap(),
            suppressed: !any_signal || onset_times.iter().all(|t| t.is_none()),
            samples,
            negative_fraction: if samples > 0 { negative as f64 / samples as f64 } else { f64::NAN },
            min_outer_flux,
            peak_v,
            onset_times,
            onset_slope: slope(&onset_pts),
            overlay_samples: log_errors.len(),
            overlay_median_log_error: median(log_errors),
            mass_lost: rec.mass[0] - rec.mass.last().unwrap(),
        });
    }
    let epsilon_slope = slope(&runs.iter().map(|r| (r.epsilon, r.peak_v[0])).collect::<Vec<_>>());
    let onset_slopes: Vec<f64> = runs.iter().filter_map(|r| r.onset_slope).collect();
    let onset_slope =
        (!onset_slopes.is_empty()).then(|| onset_slopes.iter().sum::<f64>() / onset_slopes.len() as f64);
    let front_slope = slope(&runs.iter().filter_map(|r| r.onset_times[0].map(|t| (r.epsilon, t))).collect::<Vec<_>>());
    let status = if runs.iter().all(|r| r.suppressed) { "suppressed" } else { "tunneling" }.to_string();
    Ok(TunnelingReport {
        force,
        x_edge,
        probes: exp.probes.clone(),
        v_noise,
        detrending: "probe velocity minus the center velocity 2<p>/N of the same run".into(),
        runs,
        epsilon_slope,
        onset_slope,
        front_slope,
        status,
        overlay,
        records,
    })
}

/// Mass absorbed in `[0, T]` and `[T, 2T]` with `T` half the suppression time.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SuppressionReport {
    pub epsilon: f64,
    pub half_time: f64,
    pub lost_first: f64,
    pub lost_second: f64,
    pub suppressed: bool,
}

pub fn suppression_check(
    profile: &SolitonProfile,
    cfg: &IntegratorConfig,
    launch_mode: Launch,
    epsilon: f64,
) -> Result<SuppressionReport> {
    let (omega, delta) = well(&profile.potential)?;
    if !matches!(profile.potential.shape, PotentialShape::TruncatedWell { continuity_fix: true, .. }) {
        log::warn!("suppression check on a well without the continuity fix");
    }
    let force = profile.potential.transition_force_coefficients()?;
    let params = BurgersParams::new(force.alpha0, force.beta0, omega, epsilon, delta)?;
    let half = 0.5 * suppression_timescale(&params);
    if !half.is_finite() {
        return Err(Error::InvalidParameter(format!("suppression time undefined for β = {}", force.beta0)));
    }
    let x_probe = [(1.0 + delta) / omega];
    let rec = simulate(profile, cfg, launch_mode, epsilon, &x_probe, 2.0 * half)?;
    let mass_at = |t: f64| -> f64 {
        let k = rec.times.partition_point(|&s| s < t).min(rec.times.len() - 1);
        rec.mass[k]
    };
    let m0 = rec.mass[0];
    let m1 = mass_at(half);
    let m2 = *rec.mass.last().unwrap();
    Ok(SuppressionReport {
        epsilon,
        half_time: half,
        lost_first: m0 - m1,
        lost_second: m1 - m2,
        suppressed: m0 - m1 < m1 - m2,
    })
}

//! Split-step evolution of `i ∂t ψ = -∂x² ψ + λ|ψ|²ψ + V ψ`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexField, Grid1D, Method, RealField};
use crate::potentials::PotentialSpec;
use crate::soliton::SolitonProfile;

/// Boundary treatment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Absorber {
    None,
    /// Per-step mask `exp(-dt·γ(x))`, `γ = strength·sin²` ramp from `|x| = onset`
    /// to the domain edge. The mask never exceeds one, so mass can only drop.
    Mask { onset: f64, strength: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub absorber: Absorber,
    /// Steps between diagnostic samples.
    pub record_every: usize,
}

impl IntegratorConfig {
    pub fn closed(dt: f64, record_every: usize) -> Self {
        Self { dt, absorber: Absorber::None, record_every }
    }

    pub fn validate(&self, potential: &PotentialSpec) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be at least 1".into()));
        }
        if let Absorber::Mask { onset, strength } = self.absorber {
            if !(strength > 0.0 && strength.is_finite()) {
                return Err(Error::InvalidParameter("absorber strength must be positive".into()));
            }
            if let crate::potentials::PotentialShape::TruncatedWell { omega, .. } = potential.shape {
                if onset <= 2.0 / omega {
                    return Err(Error::InvalidParameter(format!(
                        "absorber onset {onset} must lie beyond the well edge 2/ω = {}",
                        2.0 / omega
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SimState {
    pub psi: ComplexField,
    pub t: f64,
    pub step_count: u64,
}

impl SimState {
    pub fn new(psi: ComplexField) -> Self {
        Self { psi, t: 0.0, step_count: 0 }
    }
}

/// Diagnostics of a state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    /// `∫ x |ψ|² / mass`.
    pub center: f64,
    /// `Im ∫ ψ* ∂x ψ`.
    pub momentum: f64,
    /// `-E - V(0) + Ẋ²/4 + V(X)` with `Ẋ = 2·momentum/mass`; NaN without a profile.
    pub e_tot_classical: f64,
}

/// Precomputed stepping data for one trajectory.
pub struct Propagator {
    grid: Arc<Grid1D>,
    potential: PotentialSpec,
    v: Vec<f64>,
    lambda: f64,
    dt: f64,
    half_kinetic: Vec<Complex64>,
    mask: Option<Vec<f64>>,
    record_every: usize,
}

impl Propagator {
    pub fn new(grid: &Arc<Grid1D>, potential: &PotentialSpec, lambda: f64, cfg: &IntegratorConfig) -> Result<Self> {
        cfg.validate(potential)?;
        if !grid.is_periodic() {
            return Err(Error::NotPeriodic);
        }
        let v = potential.evaluate(grid)?.into_values();
        let kmax = grid.wavenumbers().iter().fold(0.0f64, |m, k| m.max(k.abs()));
        if cfg.dt * kmax * kmax > PI {
            log::debug!("dt·k_max² = {:.3} exceeds π; phases alias but stay unitary", cfg.dt * kmax * kmax);
        }
        let half_kinetic =
            grid.wavenumbers().iter().map(|k| Complex64::from_polar(1.0, -0.5 * k * k * cfg.dt)).collect();
        let mask = match cfg.absorber {
            Absorber::None => None,
            Absorber::Mask { onset, strength } => {
                let edge = grid.x_max().min(-grid.x_min());
                if onset >= edge {
                    return Err(Error::InvalidParameter(format!(
                        "absorber onset {onset} lies outside the domain half-width {edge}"
                    )));
                }
                Some(
                    (0..grid.n())
                        .map(|i| {
                            let r = grid.x(i).abs();
                            if r <= onset {
                                1.0
                            } else {
                                let u = ((r - onset) / (edge - onset)).min(1.0);
                                (-cfg.dt * strength * (0.5 * PI * u).sin().powi(2)).exp()
                            }
                        })
                        .collect(),
                )
            }
        };
        Ok(Self {
            grid: grid.clone(),
            potential: potential.clone(),
            v,
            lambda,
            dt: cfg.dt,
            half_kinetic,
            mask,
            record_every: cfg.record_every,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn record_every(&self) -> usize {
        self.record_every
    }

    pub fn potential(&self) -> &PotentialSpec {
        &self.potential
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn kinetic_half(&self, psi: &mut [Complex64]) {
        self.grid.forward(psi);
        psi.iter_mut().zip(&self.half_kinetic).for_each(|(z, p)| *z *= p);
        self.grid.inverse(psi);
    }

    /// One Strang step: half kinetic, potential plus nonlinear rotation, half
    /// kinetic, then the absorber mask.
    pub fn step(&self, state: &mut SimState) -> Result<()> {
        let psi = state.psi.values_mut();
        self.kinetic_half(psi);
        let mut total = 0.0;
        for (z, v) in psi.iter_mut().zip(&self.v) {
            let rho = z.norm_sqr();
            total += rho;
            *z *= Complex64::from_polar(1.0, -self.dt * (v + self.lambda * rho));
        }
        self.kinetic_half(psi);
        if let Some(mask) = &self.mask {
            psi.iter_mut().zip(mask).for_each(|(z, m)| *z *= m);
        }
        state.step_count += 1;
        state.t += self.dt;
        if !total.is_finite() {
            return Err(Error::NanAtStep { step: state.step_count });
        }
        Ok(())
    }

    /// Steps until `t_end`, sampling observables every `record_every` steps
    /// (including the initial and final state) and calling `hook` at each sample.
    pub fn evolve(
        &self,
        mut state: SimState,
        t_end: f64,
        profile_e: Option<f64>,
        mut hook: impl FnMut(&SimState) -> Result<()>,
    ) -> Result<(SimState, Vec<Observables>)> {
        let steps = ((t_end - state.t) / self.dt).round().max(0.0) as u64;
        let mut series = vec![observables(&state, &self.potential, self.lambda, profile_e)?];
        hook(&state)?;
        for k in 1..=steps {
            self.step(&mut state)?;
            if k % self.record_every as u64 == 0 || k == steps {
                series.push(observables(&state, &self.potential, self.lambda, profile_e)?);
                hook(&state)?;
            }
        }
        Ok((state, series))
    }
}

/// Single step with a freshly built propagator.
pub fn step(state: &SimState, cfg: &IntegratorConfig, potential: &PotentialSpec, lambda: f64) -> Result<SimState> {
    let p = Propagator::new(state.psi.grid(), potential, lambda, cfg)?;
    let mut next = state.clone();
    p.step(&mut next)?;
    Ok(next)
}

pub fn observables(state: &SimState, potential: &PotentialSpec, lambda: f64, profile_e: Option<f64>) -> Result<Observables> {
    let psi = &state.psi;
    let g = psi.grid();
    let dx = g.dx();
    let dpsi = psi.derivative(1, Method::Spectral)?;
    let mut mass = 0.0;
    let mut energy = 0.0;
    let mut first = 0.0;
    let mut mom = 0.0;
    for (i, (z, dz)) in psi.values().iter().zip(dpsi.values()).enumerate() {
        let x = g.x(i);
        let rho = z.norm_sqr();
        mass += rho;
        first += x * rho;
        energy += dz.norm_sqr() + potential.value_at(x) * rho + 0.5 * lambda * rho * rho;
        mom += (z.conj() * dz).im;
    }
    let mass = mass * dx;
    let center = first * dx / mass;
    let momentum = mom * dx;
    let e_tot_classical = match profile_e {
        Some(e) => {
            let xdot = 2.0 * momentum / mass;
            -e - potential.value_at(0.0) + 0.25 * xdot * xdot + potential.value_at(center)
        }
        None => f64::NAN,
    };
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::NanAtStep { step: state.step_count });
    }
    Ok(Observables { t: state.t, mass, energy: energy * dx, center, momentum, e_tot_classical })
}

/// `S(x - x0) e^{i v x / 2}`: profile translated to `x0` and boosted to velocity `v`.
pub fn launch(profile: &SolitonProfile, x0: f64, velocity: f64) -> Result<ComplexField> {
    let g = profile.grid().clone();
    let s = profile.s.translated(x0)?;
    ComplexField::new(
        g.clone(),
        s.values()
            .iter()
            .enumerate()
            .map(|(i, &v)| Complex64::from_polar(v, 0.5 * velocity * g.x(i)))
            .collect(),
    )
}

/// Harmonic-trap oscillation benchmark.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HarmonicReport {
    pub omega: f64,
    pub c0: f64,
    pub t_end: f64,
    pub steps: u64,
    /// `max |X(t) - C₀ cos 2ωt|`.
    pub center_error_2omega: f64,
    /// `max |X(t) - C₀ cos ωt|`, the Ehrenfest prediction for this trap.
    pub center_error_omega: f64,
    /// Frequency of the best cosine fit `C₀ cos Ωt` to `X(t)`.
    pub fitted_frequency: f64,
    /// `max |arg ψ(X,t) - E t - F(t)|` with `F = -(1/8)ωC₀² sin 2ωt`.
    pub phase_error: f64,
    /// Relative spread of `-E - V(0) + Ẋ²/4 + V(X)`.
    pub e_tot_relative_drift: f64,
    pub mass_drift: f64,
    pub energy_relative_drift: f64,
    pub times: Vec<f64>,
    pub centers: Vec<f64>,
    pub center_phases: Vec<f64>,
}

/// Launches `S(x - C₀)` in `V = ω²x²/4` and compares with the closed forms.
pub fn harmonic_benchmark(
    omega: f64,
    c0: f64,
    profile: &SolitonProfile,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<HarmonicReport> {
    let potential = PotentialSpec::harmonic(omega);
    if profile.potential != potential {
        return Err(Error::InvalidParameter("profile was not solved in this harmonic trap".into()));
    }
    let prop = Propagator::new(profile.grid(), &potential, profile.lambda, cfg)?;
    let psi0 = launch(profile, c0, 0.0)?;
    let phase0 = psi0.interpolate(c0)?.arg();
    let mut times = Vec::new();
    let mut centers = Vec::new();
    let mut phases = Vec::new();
    let mut last_phase: Option<f64> = None;
    let (state, series) = prop.evolve(SimState::new(psi0), t_end, Some(profile.e), |st| {
        let obs = observables(st, &potential, profile.lambda, None)?;
        let raw = st.psi.interpolate(obs.center)?.arg() - phase0;
        // Track the continuous phase of ψ at the centre relative to e^{iEt}.
        let base = profile.e * st.t;
        let mut p = raw - base;
        if let Some(prev) = last_phase {
            p -= 2.0 * PI * ((p - prev) / (2.0 * PI)).round();
        } else {
            p -= 2.0 * PI * (p / (2.0 * PI)).round();
        }
        last_phase = Some(p);
        times.push(st.t);
        centers.push(obs.center);
        phases.push(p);
        Ok(())
    })?;
    let mut center_error_2omega: f64 = 0.0;
    let mut center_error_omega: f64 = 0.0;
    let mut phase_error: f64 = 0.0;
    for ((&t, &x), &p) in times.iter().zip(&centers).zip(&phases) {
        center_error_2omega = center_error_2omega.max((x - c0 * (2.0 * omega * t).cos()).abs());
        center_error_omega = center_error_omega.max((x - c0 * (omega * t).cos()).abs());
        let f = -0.125 * omega * c0 * c0 * (2.0 * omega * t).sin();
        phase_error = phase_error.max((p - f).abs());
    }
    let fitted_frequency = fit_frequency(&times, &centers, c0, omega);
    let spread = |f: &dyn Fn(&Observables) -> f64| {
        let vals: Vec<f64> = series.iter().map(f).collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (hi - lo, vals[0])
    };
    let (de_tot, e_tot0) = spread(&|o| o.e_tot_classical);
    let (dm, _) = spread(&|o| o.mass);
    let (den, en0) = spread(&|o| o.energy);
    Ok(HarmonicReport {
        omega,
        c0,
        t_end,
        steps: state.step_count,
        center_error_2omega,
        center_error_omega,
        fitted_frequency,
        phase_error,
        e_tot_relative_drift: de_tot / e_tot0.abs(),
        mass_drift: dm,
        energy_relative_drift: den / en0.abs(),
        times,
        centers,
        center_phases: phases,
    })
}

/// Least-squares frequency of `C₀ cos Ωt` by golden-section search on `[0.25ω, 3ω]`.
fn fit_frequency(times: &[f64], xs: &[f64], c0: f64, omega: f64) -> f64 {
    if c0 == 0.0 {
        return f64::NAN;
    }
    let cost = |w: f64| -> f64 {
        times.iter().zip(xs).map(|(t, x)| (x - c0 * (w * t).cos()).powi(2)).sum()
    };
    // Coarse scan then golden refinement.
    let n = 2000;
    let (lo, hi) = (0.25 * omega, 3.0 * omega);
    let mut best = lo;
    let mut best_c = f64::INFINITY;
    for i in 0..=n {
        let w = lo + (hi - lo) * i as f64 / n as f64;
        let c = cost(w);
        if c < best_c {
            best_c = c;
            best = w;
        }
    }
    let h = (hi - lo) / n as f64;
    let (mut a, mut b) = (best - h, best + h);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if cost(c) < cost(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

/// Gaussian wavepacket `exp(-x²/(4σ²))`, used by free-evolution checks.
pub fn gaussian(grid: &Arc<Grid1D>, sigma: f64) -> Result<ComplexField> {
    ComplexField::from_fn(grid.clone(), |x| Complex64::new((-x * x / (4.0 * sigma * sigma)).exp(), 0.0))
}

/// Position variance `∫ x²|ψ|² / ∫|ψ|² - X²`.
pub fn variance(psi: &ComplexField) -> f64 {
    let g = psi.grid();
    let rho: RealField = psi.density();
    let m: f64 = rho.values().iter().sum();
    let x1: f64 = rho.values().iter().enumerate().map(|(i, r)| g.x(i) * r).sum::<f64>() / m;
    let x2: f64 = rho.values().iter().enumerate().map(|(i, r)| g.x(i).powi(2) * r).sum::<f64>() / m;
    x2 - x1 * x1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unitary_without_absorber() {
        let g = Grid1D::new(256, -20.0, 20.0).unwrap();
        let psi = gaussian(&g, 1.0).unwrap();
        let cfg = IntegratorConfig::closed(1e-3, 100);
        let p = Propagator::new(&g, &PotentialSpec::harmonic(1.0), -1.0, &cfg).unwrap();
        let m0 = psi.norm_sq();
        let mut st = SimState::new(psi);
        for _ in 0..1000 {
            p.step(&mut st).unwrap();
        }
        assert!((st.psi.norm_sq() - m0).abs() < 1e-12 * m0);
        assert_eq!(st.step_count, 1000);
    }

    #[test]
    fn absorber_onset_must_clear_well() {
        let cfg = IntegratorConfig { dt: 1e-3, absorber: Absorber::Mask { onset: 1.5, strength: 1.0 }, record_every: 1 };
        assert!(cfg.validate(&PotentialSpec::truncated_well(1.0, 0.1)).is_err());
    }

    #[test]
    fn nan_is_reported_with_step() {
        let g = Grid1D::new(64, -5.0, 5.0).unwrap();
        let cfg = IntegratorConfig::closed(1e-3, 1);
        let p = Propagator::new(&g, &PotentialSpec::free(), -1.0, &cfg).unwrap();
        let mut st = SimState::new(gaussian(&g, 1.0).unwrap());
        st.psi.values_mut()[3] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(p.step(&mut st), Err(Error::NanAtStep { step: 1 })));
    }
}

//! Modulation decomposition `ψ = S_E(x - X)(1 + χ) e^{iθ}` and the diagnostics
//! built on it.
//!
//! The phase is `θ = Θ(t) + γ + (u/2) x` with `Θ = ∫E ds` (trapezoidal in
//! the fitted `E`) and `u` the boost. The four parameters `(X, E, γ, u)` are
//! fixed by
//!
//! ```text
//! Re⟨S², χ⟩ = 0,  Im⟨S ∂E S, χ⟩ = 0,  Im⟨S ∂x S, χ⟩ = 0,  Re⟨S ∂x S, χ⟩ = 0,
//! ```
//!
//! all evaluated through `R = Sχ = ψ e^{-iθ} - S`, so no division by `S`
//! enters the constraint solve.

use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexField, Grid1D, RealField};
use crate::potentials::PotentialSpec;
use crate::soliton::{solve_at_energy, SolitonProfile, SolverOptions, S_FLOOR};

/// Tolerance on the normalised orthogonality conditions.
pub const FIT_TOLERANCE: f64 = 1e-10;

/// Profiles `S_E` for varying `E` at fixed potential and `λ`.
pub struct ProfileFamily {
    anchor: SolitonProfile,
    opts: SolverOptions,
    cache: Mutex<Vec<(f64, Arc<RealField>)>>,
}

const CACHE_SIZE: usize = 16;

impl ProfileFamily {
    /// The anchor must carry `∂E S`; it is reused as the weight `∂E S_E` for
    /// nearby `E`.
    pub fn new(anchor: SolitonProfile) -> Result<Self> {
        anchor.ds_de()?;
        let mut opts = SolverOptions::default();
        opts.derivative_step = None;
        let first = (anchor.e, Arc::new(anchor.s.clone()));
        Ok(Self { anchor, opts, cache: Mutex::new(vec![first]) })
    }

    pub fn anchor(&self) -> &SolitonProfile {
        &self.anchor
    }

    pub fn grid(&self) -> &Arc<Grid1D> {
        self.anchor.grid()
    }

    pub fn potential(&self) -> &PotentialSpec {
        &self.anchor.potential
    }

    pub fn lambda(&self) -> f64 {
        self.anchor.lambda
    }

    pub fn ds_de(&self) -> &RealField {
        self.anchor.ds_de.as_ref().expect("checked in new")
    }

    /// `S_E`, solved to the profile tolerance and cached.
    pub fn profile_at(&self, e: f64) -> Result<Arc<RealField>> {
        let warm = {
            let cache = self.cache.lock().expect("cache poisoned");
            if let Some((_, s)) = cache.iter().find(|(ce, _)| *ce == e) {
                return Ok(s.clone());
            }
            cache
                .iter()
                .min_by(|a, b| (a.0 - e).abs().partial_cmp(&(b.0 - e).abs()).unwrap())
                .map(|(ce, s)| {
                    let de = e - ce;
                    s.zip_with(self.ds_de(), |a, d| a + de * d)
                })
                .expect("cache never empty")?
        };
        let s = Arc::new(solve_at_energy(&self.anchor.potential, self.anchor.lambda, e, &warm, &self.opts)?);
        let mut cache = self.cache.lock().expect("cache poisoned");
        if cache.len() >= CACHE_SIZE {
            cache.remove(1);
        }
        cache.push((e, s.clone()));
        Ok(s)
    }
}

/// Parameters carried from one fit to the next.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSeed {
    pub t: f64,
    pub x: f64,
    pub e: f64,
    pub gamma: f64,
    pub boost: f64,
    /// `Θ(t) = ∫₀ᵗ E ds`.
    pub theta_base: f64,
}

impl FitSeed {
    pub fn initial(e: f64, x: f64, boost: f64) -> Self {
        Self { t: 0.0, x, e, gamma: 0.0, boost, theta_base: 0.0 }
    }
}

/// Result of one modulation fit.
#[derive(Clone, Debug)]
pub struct ModulationFit {
    pub t: f64,
    pub x: f64,
    pub e: f64,
    pub gamma: f64,
    /// Boost `u` in the phase `(u/2) x`; equals `Ẋ` for rigid motion.
    pub boost: f64,
    pub theta_base: f64,
    /// Normalised conditions `[Re⟨S²,χ⟩, Im⟨S∂E S,χ⟩, Im⟨S∂x S,χ⟩, Re⟨S∂x S,χ⟩] / ‖S‖²`.
    pub conditions: [f64; 4],
    pub iterations: usize,
    /// `‖ψ - S(1+χ)e^{iθ}‖` with `χ` restricted to the window.
    pub residual: f64,
    /// `S(x - X) > 1e-8·max S`.
    pub window: Vec<bool>,
    /// `χ` on the window, zero outside.
    pub chi: ComplexField,
    pub chi_x: ComplexField,
    /// `R = ψ e^{-iθ} - S(x - X)`, defined everywhere.
    pub r: ComplexField,
    pub s: RealField,
    pub s_x: RealField,
    pub ds_de: RealField,
    /// `arg(1 + χ)` on the window.
    pub q: RealField,
    /// `arg χ` where `|χ|` exceeds the floor.
    pub eta: RealField,
    pub eta_mask: Vec<bool>,
}

impl ModulationFit {
    pub fn seed(&self) -> FitSeed {
        FitSeed { t: self.t, x: self.x, e: self.e, gamma: self.gamma, boost: self.boost, theta_base: self.theta_base }
    }

    /// `e^{iθ(x)}` on the grid.
    pub fn phase_factor(&self) -> Vec<Complex64> {
        let g = self.s.grid();
        (0..g.n())
            .map(|i| Complex64::from_polar(1.0, self.theta_base + self.gamma + 0.5 * self.boost * g.x(i)))
            .collect()
    }

    /// `sup |χ|` over `[a, b]` (window points only).
    pub fn sup_chi(&self, band: (f64, f64)) -> f64 {
        let g = self.s.grid();
        (0..g.n())
            .filter(|&i| self.window[i] && g.x(i) >= band.0 && g.x(i) <= band.1)
            .fold(0.0, |m, i| m.max(self.chi.values()[i].norm()))
    }
}

struct Shifted {
    s: Vec<f64>,
    sx: Vec<f64>,
    ds: Vec<f64>,
}

fn shift_real(g: &Grid1D, f: &[f64], x: f64) -> Vec<f64> {
    let buf: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    g.translate(&buf, x).into_iter().map(|z| z.re).collect()
}

fn shifted(g: &Grid1D, s: &[f64], ds: &[f64], x: f64) -> Shifted {
    let s = shift_real(g, s, x);
    let sx = g.spectral_derivative_real(&s, 1);
    Shifted { s, sx, ds: shift_real(g, ds, x) }
}

struct Evaluation {
    c: [f64; 4],
    theta_base: f64,
}

fn theta_base(seed: &FitSeed, t: f64, e: f64) -> f64 {
    seed.theta_base + 0.5 * (seed.e + e) * (t - seed.t)
}

fn conditions(psi: &ComplexField, sh: &Shifted, p: &[f64; 4], base: f64) -> [f64; 4] {
    let g = psi.grid();
    let (gamma, u) = (p[2], p[3]);
    let mut acc = [0.0; 4];
    let mut mass = 0.0;
    for (i, z) in psi.values().iter().enumerate() {
        let r = z * Complex64::from_polar(1.0, -(base + gamma + 0.5 * u * g.x(i))) - sh.s[i];
        acc[0] += sh.s[i] * r.re;
        acc[1] += sh.ds[i] * r.im;
        acc[2] += sh.sx[i] * r.im;
        acc[3] += sh.sx[i] * r.re;
        mass += sh.s[i] * sh.s[i];
    }
    acc.map(|a| a / mass)
}

fn evaluate(psi: &ComplexField, t: f64, seed: &FitSeed, p: &[f64; 4], s_e: &[f64], ds: &[f64]) -> (Evaluation, Shifted) {
    let g = psi.grid();
    let sh = shifted(g, s_e, ds, p[0]);
    let base = theta_base(seed, t, p[1]);
    (Evaluation { c: conditions(psi, &sh, p, base), theta_base: base }, sh)
}

fn max_norm(c: &[f64; 4]) -> f64 {
    c.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Solves the orthogonality conditions for `(X, E, γ, u)` by damped Newton
/// with a finite-difference Jacobian, starting from `seed`.
pub fn fit_modulation(psi: &ComplexField, t: f64, family: &ProfileFamily, seed: &FitSeed) -> Result<ModulationFit> {
    let g = psi.grid().clone();
    if *g != **family.grid() {
        return Err(Error::GridMismatch);
    }
    let ds = family.ds_de().values().to_vec();
    let mut p = [seed.x, seed.e, seed.gamma, seed.boost];
    let steps = [1e-6, 1e-6 * seed.e.abs().max(1.0), 1e-6, 1e-6];
    let mut history = Vec::new();
    let mut s_e = family.profile_at(p[1])?;
    let (mut cur, _) = evaluate(psi, t, seed, &p, s_e.values(), &ds);
    let mut iterations = 0;
    while max_norm(&cur.c) >= FIT_TOLERANCE {
        history.push(max_norm(&cur.c));
        if iterations >= 50 {
            return Err(Error::NotConverged {
                what: format!("modulation fit at t = {t}"),
                iterations,
                residual: max_norm(&cur.c),
                history,
            });
        }
        iterations += 1;
        let mut jac = vec![vec![0.0; 4]; 4];
        for k in 0..4 {
            let mut q = p;
            q[k] += steps[k];
            let c = if k == 1 {
                let approx: Vec<f64> = s_e.values().iter().zip(&ds).map(|(a, d)| a + steps[1] * d).collect();
                evaluate(psi, t, seed, &q, &approx, &ds).0.c
            } else {
                evaluate(psi, t, seed, &q, s_e.values(), &ds).0.c
            };
            for row in 0..4 {
                jac[row][k] = (c[row] - cur.c[row]) / steps[k];
            }
        }
        let delta = solve_dense(jac, cur.c.iter().map(|v| -v).collect()).ok_or_else(|| Error::NotConverged {
            what: format!("modulation fit at t = {t}: singular condition Jacobian"),
            iterations,
            residual: max_norm(&cur.c),
            history: history.clone(),
        })?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let mut q = p;
            for k in 0..4 {
                q[k] += lambda * delta[k];
            }
            let trial_s = family.profile_at(q[1])?;
            let (trial, _) = evaluate(psi, t, seed, &q, trial_s.values(), &ds);
            if max_norm(&trial.c) < max_norm(&cur.c) {
                p = q;
                s_e = trial_s;
                cur = trial;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NotConverged {
                what: format!("modulation fit at t = {t}: line search failed"),
                iterations,
                residual: max_norm(&cur.c),
                history,
            });
        }
    }
    let sh = shifted(&g, s_e.values(), &ds, p[0]);
    assemble(psi, t, p, cur, sh, iterations)
}

fn assemble(psi: &ComplexField, t: f64, p: [f64; 4], ev: Evaluation, sh: Shifted, iterations: usize) -> Result<ModulationFit> {
    let g = psi.grid().clone();
    let n = g.n();
    let (x, e, gamma, u) = (p[0], p[1], p[2], p[3]);
    let dpsi = g.spectral_derivative(psi.values(), 1);
    let peak = sh.s.iter().cloned().fold(0.0, f64::max);
    let window: Vec<bool> = sh.s.iter().map(|&v| v > S_FLOOR * peak).collect();
    if window.iter().filter(|&&w| w).count() < 8 {
        return Err(Error::InsufficientSamples("profile window has fewer than 8 points".into()));
    }
    let psi_max = psi.max_abs();
    let mut r = Vec::with_capacity(n);
    let mut chi = vec![Complex64::new(0.0, 0.0); n];
    let mut chi_x = vec![Complex64::new(0.0, 0.0); n];
    let mut q = vec![0.0; n];
    let mut eta = vec![0.0; n];
    let mut eta_mask = vec![false; n];
    let mut residual = 0.0;
    for i in 0..n {
        let rot = Complex64::from_polar(1.0, -(ev.theta_base + gamma + 0.5 * u * g.x(i)));
        let ri = psi.values()[i] * rot - sh.s[i];
        r.push(ri);
        if window[i] {
            let rx = (dpsi[i] - Complex64::new(0.0, 0.5 * u) * psi.values()[i]) * rot - sh.sx[i];
            let c = ri / sh.s[i];
            chi[i] = c;
            chi_x[i] = (rx * sh.s[i] - ri * sh.sx[i]) / (sh.s[i] * sh.s[i]);
            q[i] = (Complex64::new(1.0, 0.0) + c).arg();
            if c.norm() > eta_floor(psi_max, sh.s[i]) {
                eta[i] = c.arg();
                eta_mask[i] = true;
            }
        } else {
            residual += psi.values()[i].norm_sqr();
        }
    }
    Ok(ModulationFit {
        t,
        x,
        e,
        gamma,
        boost: u,
        theta_base: ev.theta_base,
        conditions: ev.c,
        iterations,
        residual: (residual * g.dx()).sqrt(),
        window,
        chi: ComplexField::new(g.clone(), chi)?,
        chi_x: ComplexField::new(g.clone(), chi_x)?,
        r: ComplexField::new(g.clone(), r)?,
        s: RealField::new(g.clone(), sh.s)?,
        s_x: RealField::new(g.clone(), sh.sx)?,
        ds_de: RealField::new(g.clone(), sh.ds)?,
        q: RealField::new(g.clone(), q)?,
        eta: RealField::new(g.clone(), eta)?,
        eta_mask,
    })
}

/// Floor on `|χ|` below which `η` is not reported: the larger of 1e-10 and
/// ten times the round-off of `ψ/S`.
pub fn eta_floor(psi_max: f64, s: f64) -> f64 {
    (10.0 * f64::EPSILON * psi_max / s).max(1e-10)
}

/// Fits a time series by continuation.
pub fn fit_series(snapshots: &[(f64, ComplexField)], family: &ProfileFamily, seed: FitSeed) -> Result<Vec<ModulationFit>> {
    let mut seed = seed;
    let mut out = Vec::with_capacity(snapshots.len());
    for (t, psi) in snapshots {
        let fit = fit_modulation(psi, *t, family, &seed)?;
        seed = fit.seed();
        out.push(fit);
    }
    Ok(out)
}

/// Polar quantities of `χ` and their derivatives.
#[derive(Clone, Debug)]
pub struct Phases {
    pub q: Vec<f64>,
    pub eta: Vec<f64>,
    pub dq_dx: Vec<f64>,
    pub deta_dx: Vec<f64>,
    /// `-(q'/|χ|)(cos η + sin η)`.
    pub deta_dx_model: Vec<f64>,
    /// Where `q` is defined.
    pub window: Vec<bool>,
    /// Where `η` is defined.
    pub eta_mask: Vec<bool>,
}

/// Polar decomposition from `χ` and `∂x χ`: `q = arg(1+χ)`, `η = arg χ`,
/// `q' = Im(χ'/(1+χ))`, `η' = Im(χ'/χ)`.
pub fn phases_of(chi: &[Complex64], chi_x: &[Complex64], window: &[bool], floor: &dyn Fn(usize) -> f64) -> Phases {
    let n = chi.len();
    let one = Complex64::new(1.0, 0.0);
    let mut p = Phases {
        q: vec![0.0; n],
        eta: vec![0.0; n],
        dq_dx: vec![0.0; n],
        deta_dx: vec![0.0; n],
        deta_dx_model: vec![0.0; n],
        window: window.to_vec(),
        eta_mask: vec![false; n],
    };
    for i in 0..n {
        if !window[i] {
            continue;
        }
        let c = chi[i];
        p.q[i] = (one + c).arg();
        p.dq_dx[i] = (chi_x[i] / (one + c)).im;
        if c.norm() > floor(i) {
            let eta = c.arg();
            p.eta[i] = eta;
            p.deta_dx[i] = (chi_x[i] / c).im;
            p.deta_dx_model[i] = -(p.dq_dx[i] / c.norm()) * (eta.cos() + eta.sin());
            p.eta_mask[i] = true;
        }
    }
    p
}

pub fn phases(fit: &ModulationFit) -> Phases {
    let psi_max = fit.s.values().iter().cloned().fold(0.0, f64::max);
    let s = fit.s.values();
    phases_of(fit.chi.values(), fit.chi_x.values(), &fit.window, &|i| eta_floor(psi_max, s[i]))
}

/// Left-hand side minus one of `sin²η - cos η (sin η + cos η) = 1`.
pub fn trapped_identity(eta: f64) -> f64 {
    eta.sin().powi(2) - eta.cos() * (eta.sin() + eta.cos()) - 1.0
}

/// Angles with `cos η = 0` or `tan η = -2`.
pub fn trapped_set() -> [f64; 4] {
    let a = (-2.0f64).atan();
    [0.5 * PI, -0.5 * PI, a, a + PI]
}

fn circular_distance(a: f64, b: f64) -> f64 {
    crate::hydro::wrap_angle(a - b).abs()
}

/// Histogram of `η` over a band and distance of its mode to the trapped set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrappedEtaReport {
    pub samples: usize,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mode: f64,
    pub nearest_trapped: f64,
    pub distance: f64,
}

const ETA_BINS: usize = 72;

/// Collects `η` over `band` (and its mirror image) from every fit.
pub fn trapped_eta_check(fits: &[ModulationFit], band: (f64, f64)) -> Result<TrappedEtaReport> {
    let mut values = Vec::new();
    for f in fits {
        let g = f.s.grid();
        for i in 0..g.n() {
            let ax = g.x(i).abs();
            if f.eta_mask[i] && ax >= band.0 && ax <= band.1 {
                values.push(f.eta.values()[i]);
            }
        }
    }
    if values.len() < 10 {
        return Err(Error::InsufficientSamples(format!("{} η samples in the band", values.len())));
    }
    let width = 2.0 * PI / ETA_BINS as f64;
    let mut counts = vec![0usize; ETA_BINS];
    for &v in &values {
        let k = (((v + PI) / width).floor() as usize).min(ETA_BINS - 1);
        counts[k] += 1;
    }
    let kmax = (0..ETA_BINS).max_by_key(|&k| counts[k]).unwrap();
    let lo = -PI + kmax as f64 * width;
    // Circular mean of the samples in the modal bin.
    let (sx, sy) = values
        .iter()
        .filter(|&&v| v >= lo && v < lo + width)
        .fold((0.0, 0.0), |(a, b), v| (a + v.cos(), b + v.sin()));
    let mode = if sx == 0.0 && sy == 0.0 { lo + 0.5 * width } else { sy.atan2(sx) };
    let (nearest, distance) = trapped_set()
        .iter()
        .map(|&a| (a, circular_distance(mode, a)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    Ok(TrappedEtaReport {
        samples: values.len(),
        bin_edges: (0..=ETA_BINS).map(|k| -PI + k as f64 * width).collect(),
        counts,
        mode,
        nearest_trapped: nearest,
        distance,
    })
}

/// Growth of `χ` over the transition band.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChiBoundReport {
    pub t_limit: f64,
    pub times: Vec<f64>,
    pub sup_chi: Vec<f64>,
    /// Slope of `log sup|χ|` against `log t`.
    pub growth_exponent: f64,
    /// Least-squares `C` in `sup|χ| ≈ C ε²ω²t²`.
    pub fitted_c: f64,
    pub sup_at_limit: f64,
    pub bound: f64,
    /// Largest and 95th-percentile ratio `|χ|'/|q'|` where `|χ|` is above the floor.
    pub proposition_ratio_max: f64,
    pub proposition_ratio_p95: f64,
}

pub fn chi_bound_check(fits: &[ModulationFit], epsilon: f64, omega: f64, delta: f64, band: (f64, f64)) -> ChiBoundReport {
    let t_limit = delta / (omega * epsilon);
    let t0 = fits.first().map(|f| f.t).unwrap_or(0.0);
    let mut times = Vec::new();
    let mut sups = Vec::new();
    let mut ratios = Vec::new();
    for f in fits.iter().filter(|f| f.t - t0 <= t_limit * (1.0 + 1e-9)) {
        let sup = f.sup_chi(band).max(f.sup_chi((-band.1, -band.0)));
        times.push(f.t - t0);
        sups.push(sup);
        let ph = phases(f);
        let g = f.s.grid();
        for i in 0..g.n() {
            let ax = g.x(i).abs();
            if ph.eta_mask[i] && ax >= band.0 && ax <= band.1 && ph.dq_dx[i].abs() > 0.0 {
                let c = f.chi.values()[i];
                let abs_prime = (c.conj() * f.chi_x.values()[i]).re / c.norm();
                ratios.push(abs_prime.abs() / ph.dq_dx[i].abs());
            }
        }
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(&sups)
        .filter(|(&t, &s)| t > 0.0 && s > 0.0)
        .map(|(t, s)| (t.ln(), s.ln()))
        .collect();
    let growth_exponent = if pts.len() >= 2 { crate::potentials::affine_fit(&pts).0 } else { f64::NAN };
    let scale = (epsilon * omega).powi(2);
    let (num, den) = times.iter().zip(&sups).fold((0.0, 0.0), |(a, b), (t, s)| {
        let tau = scale * t * t;
        (a + s * tau, b + tau * tau)
    });
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pct = |p: f64| if ratios.is_empty() { f64::NAN } else { ratios[((ratios.len() - 1) as f64 * p) as usize] };
    ChiBoundReport {
        t_limit,
        sup_at_limit: sups.last().copied().unwrap_or(f64::NAN),
        times,
        sup_chi: sups,
        growth_exponent,
        fitted_c: if den > 0.0 { num / den } else { f64::NAN },
        bound: delta,
        proposition_ratio_max: pct(1.0),
        proposition_ratio_p95: pct(0.95),
    }
}

/// `j = 2 Im(ψ* ∂x ψ)` at `x_probe`, positive to the right.
pub fn mass_flux(psi: &ComplexField, x_probe: f64) -> Result<f64> {
    let g = psi.grid();
    if !(x_probe >= g.x_min() && x_probe < g.x_max()) {
        return Err(Error::ProbeOutside { x: x_probe });
    }
    Ok(crate::hydro::current(psi)?.to_complex().interpolate(x_probe)?.re)
}

/// Measured and modelled `Ė`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergyDecayReport {
    pub x_probe: f64,
    pub times: Vec<f64>,
    pub e: Vec<f64>,
    /// Central differences of `E(t)`, at `times[1..n-1]`.
    pub edot_measured: Vec<f64>,
    /// `(∫_{-∞}^{x} S ∂E S)⁻¹ S² Re χ ∂x q` at the probe.
    pub edot_model: Vec<f64>,
    pub sign_agreement: f64,
}

/// Floor on `|∫_{-∞}^{x} S ∂E S|`.
pub const STABILITY_FLOOR: f64 = 1e-12;

pub fn energy_decay_rate(fits: &[ModulationFit], x_probe: f64) -> Result<EnergyDecayReport> {
    if fits.len() < 3 {
        return Err(Error::InsufficientSamples("need at least 3 fits".into()));
    }
    let mut edot_measured = Vec::new();
    let mut edot_model = Vec::new();
    let mut agree = 0usize;
    let mut counted = 0usize;
    for k in 1..fits.len() - 1 {
        let f = &fits[k];
        let g = f.s.grid();
        let ip = g.nearest_index(x_probe).ok_or(Error::ProbeOutside { x: x_probe })?;
        let integral: f64 =
            (0..=ip).map(|i| f.s.values()[i] * f.ds_de.values()[i]).sum::<f64>() * g.dx();
        if integral.abs() < STABILITY_FLOOR {
            return Err(Error::DegenerateStability(integral));
        }
        let ph = phases(f);
        let s = f.s.values()[ip];
        let model = if f.window[ip] { s * s * f.chi.values()[ip].re * ph.dq_dx[ip] / integral } else { 0.0 };
        let measured = (fits[k + 1].e - fits[k - 1].e) / (fits[k + 1].t - fits[k - 1].t);
        if model != 0.0 && measured != 0.0 {
            counted += 1;
            if model.signum() == measured.signum() {
                agree += 1;
            }
        }
        edot_measured.push(measured);
        edot_model.push(model);
    }
    Ok(EnergyDecayReport {
        x_probe,
        times: fits.iter().map(|f| f.t).collect(),
        e: fits.iter().map(|f| f.e).collect(),
        edot_measured,
        edot_model,
        sign_agreement: if counted > 0 { agree as f64 / counted as f64 } else { f64::NAN },
    })
}

/// Cut-off functions for the localised momentum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CutoffSpec {
    /// Trapezoid on `[a, b]`: rises linearly over the first quarter, equals one
    /// in the middle half and falls over the last quarter.
    Tent { a: f64, b: f64 },
    /// Zero for `|x| ≤ k`, `sin²` ramp up to `|x| = k + ramp`, one beyond.
    SmoothExterior { k: f64, ramp: f64 },
}

impl CutoffSpec {
    pub fn default_exterior(omega: f64) -> Self {
        Self::SmoothExterior { k: 2.0 / omega + 1.0, ramp: 2.0 }
    }

    /// Slope `4/(b - a)` of the tent ramps.
    pub fn slope(&self) -> Option<f64> {
        match self {
            Self::Tent { a, b } => Some(4.0 / (b - a)),
            Self::SmoothExterior { .. } => None,
        }
    }

    pub fn value_at(&self, x: f64) -> f64 {
        match *self {
            Self::Tent { a, b } => {
                let q = 0.25 * (b - a);
                if x <= a || x >= b {
                    0.0
                } else if x < a + q {
                    (x - a) / q
                } else if x > b - q {
                    (b - x) / q
                } else {
                    1.0
                }
            }
            Self::SmoothExterior { k, ramp } => {
                let r = x.abs();
                if r <= k {
                    0.0
                } else if r >= k + ramp {
                    1.0
                } else {
                    (0.5 * PI * (r - k) / ramp).sin().powi(2)
                }
            }
        }
    }

    pub fn samples(&self, grid: &Arc<Grid1D>) -> Result<RealField> {
        if let Self::Tent { a, b } = self {
            if !(b > a) {
                return Err(Error::InvalidParameter("tent cutoff needs b > a".into()));
            }
        }
        RealField::from_fn(grid.clone(), |x| self.value_at(x))
    }
}

/// Localised momentum `⟨ψ, F p F ψ⟩` and its soliton-frame counterpart.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MomentumReport {
    pub p_f: f64,
    pub imaginary_part: f64,
    /// `(v/2) ⟨S, F² S⟩` when a fit is supplied.
    pub soliton_frame: Option<f64>,
}

/// Relative tolerance on the imaginary part of `⟨ψ, F p F ψ⟩`.
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;

pub fn momentum_observable(psi: &ComplexField, cutoff: &CutoffSpec, soliton: Option<(&RealField, f64)>) -> Result<MomentumReport> {
    let g = psi.grid();
    let f = cutoff.samples(g)?;
    let fpsi: Vec<Complex64> = psi.values().iter().zip(f.values()).map(|(z, w)| z * w).collect();
    let d = g.spectral_derivative(&fpsi, 1);
    // p = -i ∂x.
    let val: Complex64 = fpsi.iter().zip(&d).map(|(a, b)| a.conj() * Complex64::new(0.0, -1.0) * b).sum::<Complex64>() * g.dx();
    let scale = fpsi.iter().map(|z| z.norm_sqr()).sum::<f64>() * g.dx();
    if val.im.abs() > HERMITIAN_TOLERANCE * (1.0 + val.re.abs() + scale) {
        return Err(Error::NonHermitian(val.im));
    }
    let soliton_frame = soliton.map(|(s, v)| {
        0.5 * v * s.values().iter().zip(f.values()).map(|(s, w)| (w * s).powi(2)).sum::<f64>() * g.dx()
    });
    Ok(MomentumReport { p_f: val.re, imaginary_part: val.im, soliton_frame })
}

/// `γ̇` from the fitted series and from projecting the equation of motion.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GammaDotReport {
    pub times: Vec<f64>,
    /// Central differences of `γ`.
    pub gamma_dot: Vec<f64>,
    /// `Re⟨∂E S, G⟩ / Re⟨∂E S, φ⟩` with `φ = ψ e^{-iθ}` and
    /// `G = i∂t φ + (∂x + iu/2)² φ - (V + λ|φ|²) φ - (E + u̇ x/2) φ`.
    pub gamma_dot_projection: Vec<f64>,
    /// `2 γ̇ ⟨∂E S, φ⟩` and `2 ⟨∂E S, G⟩`.
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub max_residual: f64,
}

pub fn gamma_dot_estimate(fits: &[ModulationFit], potential: &PotentialSpec, lambda: f64) -> Result<GammaDotReport> {
    if fits.len() < 3 {
        return Err(Error::InsufficientSamples("need at least 3 fits".into()));
    }
    let g = fits[0].s.grid().clone();
    let v: Vec<f64> = potential.evaluate(&g)?.into_values();
    let phi = |f: &ModulationFit| -> Vec<Complex64> {
        f.r.values().iter().zip(f.s.values()).map(|(r, s)| r + s).collect()
    };
    let mut report = GammaDotReport {
        times: Vec::new(),
        gamma_dot: Vec::new(),
        gamma_dot_projection: Vec::new(),
        lhs: Vec::new(),
        rhs: Vec::new(),
        max_residual: 0.0,
    };
    for k in 1..fits.len() - 1 {
        let (a, f, b) = (&fits[k - 1], &fits[k], &fits[k + 1]);
        let dt = b.t - a.t;
        let gd = (b.gamma - a.gamma) / dt;
        let udot = (b.boost - a.boost) / dt;
        let (pa, p, pb) = (phi(a), phi(f), phi(b));
        let px = g.spectral_derivative(&p, 1);
        let pxx = g.spectral_derivative(&p, 2);
        let u = f.boost;
        let w = f.ds_de.values();
        let stab: f64 = f.s.values().iter().zip(w).map(|(s, d)| s * d).sum::<f64>() * g.dx();
        if stab.abs() < STABILITY_FLOOR {
            return Err(Error::DegenerateStability(stab));
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..g.n() {
            let x = g.x(i);
            let pt = (pb[i] - pa[i]) / dt;
            let kin = pxx[i] + Complex64::new(0.0, u) * px[i] - 0.25 * u * u * p[i];
            let gi = Complex64::new(0.0, 1.0) * pt + kin - (v[i] + lambda * p[i].norm_sqr()) * p[i]
                - (f.e + 0.5 * udot * x) * p[i];
            num += w[i] * gi.re;
            den += w[i] * p[i].re;
        }
        let (num, den) = (num * g.dx(), den * g.dx());
        let lhs = 2.0 * gd * den;
        let rhs = 2.0 * num;
        report.times.push(f.t);
        report.gamma_dot.push(gd);
        report.gamma_dot_projection.push(num / den);
        report.lhs.push(lhs);
        report.rhs.push(rhs);
        report.max_residual = report.max_residual.max((lhs - rhs).abs());
    }
    Ok(report)
}

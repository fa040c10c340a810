//! Madelung fields, hydrodynamic residuals, the quantum potential and the
//! closed-form characteristic velocity of the tunnelling outflow.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexField, Method, RealField};
use crate::potentials::PotentialSpec;
use crate::soliton::SolitonProfile;

/// Default relative density floor.
pub const RHO_FLOOR: f64 = 1e-10;

/// Relative density floor for residual norms: below it, round-off in
/// `∂x³√ρ/√ρ` outweighs the time-differencing error.
pub const RESIDUAL_RHO_FLOOR: f64 = 1e-4;

/// Density, velocity and unwrapped phase of a wavefunction.
#[derive(Clone, Debug)]
pub struct HydroFields {
    pub rho: RealField,
    /// `v = 2 ∂x φ`; zero where the mask is false.
    pub v: RealField,
    /// Unwrapped phase; zero where the mask is false.
    pub phase: RealField,
    pub support_mask: Vec<bool>,
}

impl HydroFields {
    /// `√ρ e^{iφ}` on the mask, zero elsewhere.
    pub fn reconstruct(&self) -> Result<ComplexField> {
        let values = self
            .rho
            .values()
            .iter()
            .zip(self.phase.values())
            .zip(&self.support_mask)
            .map(|((r, p), &m)| if m { Complex64::from_polar(r.sqrt(), *p) } else { Complex64::new(0.0, 0.0) })
            .collect();
        ComplexField::new(self.rho.grid().clone(), values)
    }
}

fn support(rho: &[f64], floor: f64) -> Vec<bool> {
    let peak = rho.iter().cloned().fold(0.0, f64::max);
    rho.iter().map(|&r| r > floor * peak && r > 0.0).collect()
}

/// Maximal runs of `true` in a mask, as half-open index ranges.
fn components(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < mask.len() {
        if mask[i] {
            let start = i;
            while i < mask.len() && mask[i] {
                i += 1;
            }
            out.push((start, i));
        } else {
            i += 1;
        }
    }
    out
}

/// Current `j = 2 Im(ψ* ∂x ψ) = 2(Re ψ ∂x Im ψ - Im ψ ∂x Re ψ)` on the grid.
/// The parts are differentiated separately so that a real `ψ` gives `j ≡ 0`.
pub fn current(psi: &ComplexField) -> Result<RealField> {
    let g = psi.grid();
    if !g.is_periodic() {
        return Err(Error::NotPeriodic);
    }
    let re: Vec<f64> = psi.values().iter().map(|z| z.re).collect();
    let im: Vec<f64> = psi.values().iter().map(|z| z.im).collect();
    let dre = g.spectral_derivative_real(&re, 1);
    let dim = g.spectral_derivative_real(&im, 1);
    RealField::new(
        g.clone(),
        (0..g.n()).map(|i| 2.0 * (re[i] * dim[i] - im[i] * dre[i])).collect(),
    )
}

/// Madelung decomposition. The velocity is evaluated as `j/ρ`, which equals
/// `2 ∂x φ` without differentiating the unwrapped phase.
pub fn madelung(psi: &ComplexField, rho_floor: f64) -> Result<HydroFields> {
    let g = psi.grid().clone();
    let rho: Vec<f64> = psi.values().iter().map(|z| z.norm_sqr()).collect();
    let mask = support(&rho, rho_floor);
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }
    let j = current(psi)?;
    let mut phase = vec![0.0; g.n()];
    for (a, b) in components(&mask) {
        let peak = (a..b).max_by(|&p, &q| rho[p].partial_cmp(&rho[q]).unwrap()).unwrap();
        let z = psi.values();
        phase[peak] = z[peak].arg();
        for i in peak + 1..b {
            phase[i] = phase[i - 1] + (z[i] * z[i - 1].conj()).arg();
        }
        for i in (a..peak).rev() {
            phase[i] = phase[i + 1] + (z[i] * z[i + 1].conj()).arg();
        }
    }
    let v = (0..g.n()).map(|i| if mask[i] { j.values()[i] / rho[i] } else { 0.0 }).collect();
    Ok(HydroFields {
        rho: RealField::new(g.clone(), rho)?,
        v: RealField::new(g.clone(), v)?,
        phase: RealField::new(g, phase)?,
        support_mask: mask,
    })
}

/// `Q = -A''/A` on the mask `A² > floor·max A²`; zero elsewhere.
pub fn quantum_potential(amplitude: &RealField, rho_floor: f64) -> Result<(RealField, Vec<bool>)> {
    if let Some(i) = amplitude.values().iter().position(|&a| a < 0.0) {
        return Err(Error::NegativeAmplitude(i));
    }
    let a = amplitude.values();
    let rho: Vec<f64> = a.iter().map(|v| v * v).collect();
    let mask = support(&rho, rho_floor);
    let a2 = amplitude.derivative(2, Method::Spectral)?;
    let q = (0..a.len()).map(|i| if mask[i] { -a2.values()[i] / a[i] } else { 0.0 }).collect();
    Ok((RealField::new(amplitude.grid().clone(), q)?, mask))
}

/// Residuals of the continuity and Euler equations at one interior snapshot.
#[derive(Clone, Debug)]
pub struct ResidualSnapshot {
    pub t: f64,
    /// `∂t ρ + ∂x(ρ v)`.
    pub r1: RealField,
    /// `½∂t v + ½ v ∂x v + ∂x[V + Q + λρ]` with `Q = -∂x²√ρ/√ρ`.
    pub r2: RealField,
    pub mask: Vec<bool>,
}

impl ResidualSnapshot {
    fn masked_max(&self, f: &RealField, interior: usize) -> f64 {
        let m = erode(&self.mask, interior);
        f.values().iter().zip(&m).filter(|(_, &k)| k).fold(0.0, |acc, (v, _)| acc.max(v.abs()))
    }

    /// Sup norms of `(r1, r2)` on the mask shrunk by `interior` points.
    pub fn norms(&self, interior: usize) -> (f64, f64) {
        (self.masked_max(&self.r1, interior), self.masked_max(&self.r2, interior))
    }
}

fn erode(mask: &[bool], k: usize) -> Vec<bool> {
    let n = mask.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(k);
            let hi = (i + k + 1).min(n);
            mask[lo..hi].iter().all(|&m| m)
        })
        .collect()
}

/// Smooth per-snapshot fields used by the residuals.
struct Local {
    rho: Vec<f64>,
    j: Vec<f64>,
    v: Vec<f64>,
    vx: Vec<f64>,
    qx: Vec<f64>,
    rhox: Vec<f64>,
    mask: Vec<bool>,
}

fn local_fields(psi: &ComplexField, rho_floor: f64) -> Result<Local> {
    let g = psi.grid();
    let rho: Vec<f64> = psi.values().iter().map(|z| z.norm_sqr()).collect();
    let mask = support(&rho, rho_floor);
    let j = current(psi)?.into_values();
    let rhox = g.spectral_derivative_real(&rho, 1);
    let jx = g.spectral_derivative_real(&j, 1);
    let amp: Vec<f64> = rho.iter().map(|r| r.sqrt()).collect();
    let a1 = g.spectral_derivative_real(&amp, 1);
    let a2 = g.spectral_derivative_real(&amp, 2);
    let a3 = g.spectral_derivative_real(&amp, 3);
    let n = g.n();
    let mut v = vec![0.0; n];
    let mut vx = vec![0.0; n];
    let mut qx = vec![0.0; n];
    for i in 0..n {
        if mask[i] {
            v[i] = j[i] / rho[i];
            vx[i] = (jx[i] * rho[i] - j[i] * rhox[i]) / (rho[i] * rho[i]);
            // Q = -A''/A, so ∂x Q = -(A''' A - A'' A')/A².
            qx[i] = -(a3[i] * amp[i] - a2[i] * a1[i]) / (amp[i] * amp[i]);
        }
    }
    Ok(Local { rho, j, v, vx, qx, rhox, mask })
}

/// Residuals of the hydrodynamic equations at every interior snapshot,
/// using three-point differences in time over the stored series.
pub fn hydro_residuals(
    series: &[(f64, ComplexField)],
    potential: &PotentialSpec,
    lambda: f64,
    rho_floor: f64,
) -> Result<Vec<ResidualSnapshot>> {
    if series.len() < 3 {
        return Err(Error::InsufficientSamples(format!(
            "need at least 3 snapshots, got {}",
            series.len()
        )));
    }
    let g = series[0].1.grid().clone();
    let locals: Vec<Local> =
        series.par_iter().map(|(_, psi)| local_fields(psi, rho_floor)).collect::<Result<_>>()?;
    let vprime: Vec<f64> = (0..g.n()).map(|i| potential.derivative_at(g.x(i))).collect();
    (1..series.len() - 1)
        .into_par_iter()
        .map(|k| {
            let (prev, cur, next) = (&locals[k - 1], &locals[k], &locals[k + 1]);
            // Three-point derivative, second order on uneven spacing.
            let (h1, h2) = (series[k].0 - series[k - 1].0, series[k + 1].0 - series[k].0);
            let (wa, wb, wc) = (-h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2)));
            let mask: Vec<bool> =
                (0..g.n()).map(|i| prev.mask[i] && cur.mask[i] && next.mask[i]).collect();
            if !mask.iter().any(|&m| m) {
                return Err(Error::MaskMismatch(k));
            }
            let jx = g.spectral_derivative_real(&cur.j, 1);
            let mut r1 = vec![0.0; g.n()];
            let mut r2 = vec![0.0; g.n()];
            for i in 0..g.n() {
                if !mask[i] {
                    continue;
                }
                r1[i] = wa * prev.rho[i] + wb * cur.rho[i] + wc * next.rho[i] + jx[i];
                let vt = wa * prev.v[i] + wb * cur.v[i] + wc * next.v[i];
                r2[i] = 0.5 * vt + 0.5 * cur.v[i] * cur.vx[i] + vprime[i] + cur.qx[i] + lambda * cur.rhox[i];
            }
            Ok(ResidualSnapshot {
                t: series[k].0,
                r1: RealField::new(g.clone(), r1)?,
                r2: RealField::new(g.clone(), r2)?,
                mask,
            })
        })
        .collect()
}

/// Comparison of the exact quantum potential of `S|1+χ|` with its linear model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QExpansionReport {
    /// Sup of `|Q_exact - Q_linear|` on the window.
    pub error: f64,
    /// Same at half the amplitude of `χ`.
    pub error_half: f64,
    /// `error / error_half`; about 4 for a second-order remainder.
    pub ratio: f64,
    pub window: (f64, f64),
}

/// Window on which the expansion is compared: `S > 1e-3·max S`.
const Q_WINDOW_FLOOR: f64 = 1e-3;

fn q_error(profile: &SolitonProfile, chi: &[Complex64], window: &[bool]) -> Result<f64> {
    let g = profile.grid();
    let s = profile.s.values();
    let amp: Vec<f64> = s.iter().zip(chi).map(|(s, c)| s * (Complex64::new(1.0, 0.0) + c).norm()).collect();
    let a2 = g.spectral_derivative_real(&amp, 2);
    let s1 = g.spectral_derivative_real(s, 1);
    let s2 = g.spectral_derivative_real(s, 2);
    let re: Vec<f64> = chi.iter().map(|c| c.re).collect();
    let r1 = g.spectral_derivative_real(&re, 1);
    let r2 = g.spectral_derivative_real(&re, 2);
    let mut err: f64 = 0.0;
    for i in 0..g.n() {
        if !window[i] {
            continue;
        }
        let exact = -a2[i] / amp[i];
        let linear = -s2[i] / s[i] - 2.0 * s1[i] / s[i] * r1[i] - r2[i];
        err = err.max((exact - linear).abs());
    }
    Ok(err)
}

/// Measures the remainder of `Q(S|1+χ|) ≈ -S''/S - 2(S'/S)∂x Re χ - ∂x² Re χ`
/// at `χ` and `χ/2`.
pub fn q_expansion_check(profile: &SolitonProfile, chi: &ComplexField) -> Result<QExpansionReport> {
    if chi.grid() != profile.grid() && **chi.grid() != **profile.grid() {
        return Err(Error::GridMismatch);
    }
    if chi.max_abs() >= 0.3 {
        return Err(Error::InvalidParameter(format!("‖χ‖∞ = {} must be below 0.3", chi.max_abs())));
    }
    let g = profile.grid();
    let s = profile.s.values();
    let peak = s.iter().cloned().fold(0.0, f64::max);
    let window: Vec<bool> = s.iter().map(|&v| v > Q_WINDOW_FLOOR * peak).collect();
    let count = window.iter().filter(|&&w| w).count();
    if count < 8 {
        return Err(Error::InsufficientSamples(format!("window has only {count} points")));
    }
    let lo = window.iter().position(|&w| w).unwrap();
    let hi = window.iter().rposition(|&w| w).unwrap();
    let full = q_error(profile, chi.values(), &window)?;
    let half: Vec<Complex64> = chi.values().iter().map(|c| c * 0.5).collect();
    let half_err = q_error(profile, &half, &window)?;
    Ok(QExpansionReport {
        error: full,
        error_half: half_err,
        ratio: if half_err > 0.0 { full / half_err } else { f64::NAN },
        window: (g.x(lo), g.x(hi)),
    })
}

/// Parameters of the closed-form outflow velocity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BurgersParams {
    pub alpha: f64,
    pub beta: f64,
    pub omega: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// `(1+δ)/ω`.
    pub x_edge: f64,
    /// `1/(ωε)`.
    pub t0: f64,
}

impl BurgersParams {
    pub fn new(alpha: f64, beta: f64, omega: f64, epsilon: f64, delta: f64) -> Result<Self> {
        for (name, v) in [("omega", omega), ("epsilon", epsilon)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(alpha.is_finite() && beta.is_finite() && delta.is_finite()) {
            return Err(Error::InvalidParameter("Burgers coefficients must be finite".into()));
        }
        if epsilon > 0.3 {
            log::warn!("epsilon = {epsilon} is outside the small-amplitude regime");
        }
        Ok(Self { alpha, beta, omega, epsilon, delta, x_edge: (1.0 + delta) / omega, t0: 1.0 / (omega * epsilon) })
    }

    /// `β ε⁻² ω⁻² (x - x_edge)`.
    fn threshold(&self, x: f64) -> f64 {
        self.beta * (x - self.x_edge) / (self.epsilon * self.omega).powi(2)
    }
}

/// `v = ½αε²ω²[t - √(t² - βε⁻²ω⁻²Δx)]` where the square root is real, else 0.
pub fn burgers_velocity(p: &BurgersParams, x: f64, t: f64) -> Result<f64> {
    if x < p.x_edge {
        return Err(Error::InsideWell { x, x_edge: p.x_edge });
    }
    let c = p.threshold(x);
    if t * t > c {
        Ok(0.5 * p.alpha * (p.epsilon * p.omega).powi(2) * (t - (t * t - c).sqrt()))
    } else {
        Ok(0.0)
    }
}

/// Smaller root `t'` of `x - x_edge = ½αε²ω² t'(t - t')`, the exit time of
/// the characteristic reaching `(x, t)`.
pub fn burgers_exit_time(p: &BurgersParams, x: f64, t: f64) -> Result<Option<f64>> {
    if x < p.x_edge {
        return Err(Error::InsideWell { x, x_edge: p.x_edge });
    }
    let a = 0.5 * p.alpha * (p.epsilon * p.omega).powi(2);
    if a == 0.0 {
        return Ok(None);
    }
    let d = (x - p.x_edge) / a;
    let disc = t * t - 4.0 * d;
    if disc < 0.0 {
        return Ok(None);
    }
    Ok(Some(0.5 * (t - disc.sqrt())))
}

/// `β^{1/2} ε⁻¹ ω^{-1/2}`.
pub fn suppression_timescale(p: &BurgersParams) -> f64 {
    p.beta.sqrt() / (p.epsilon * p.omega.sqrt())
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid1D;

    #[test]
    fn plane_wave_velocity() {
        let g = Grid1D::new(128, -PI, PI).unwrap();
        let psi = ComplexField::from_fn(g, |x| Complex64::from_polar(1.0, 3.0 * x)).unwrap();
        let h = madelung(&psi, RHO_FLOOR).unwrap();
        assert!(h.rho.values().iter().all(|r| (r - 1.0).abs() < 1e-14));
        assert!(h.v.values().iter().all(|v| (v - 6.0).abs() < 1e-10));
    }

    #[test]
    fn empty_mask_rejected() {
        let g = Grid1D::new(32, -1.0, 1.0).unwrap();
        assert!(matches!(madelung(&ComplexField::zeros(g), RHO_FLOOR), Err(Error::EmptyMask)));
    }

    #[test]
    fn negative_amplitude_rejected() {
        let g = Grid1D::new(32, -1.0, 1.0).unwrap();
        let a = RealField::from_fn(g, |x| x).unwrap();
        assert!(matches!(quantum_potential(&a, RHO_FLOOR), Err(Error::NegativeAmplitude(_))));
    }

    #[test]
    fn burgers_edge_and_validity() {
        let p = BurgersParams::new(1.0, 1.0, 1.0, 0.1, 0.1).unwrap();
        assert_eq!(burgers_velocity(&p, p.x_edge, 3.0).unwrap(), 0.0);
        let dx = 0.5;
        let c = p.beta * dx / (p.epsilon * p.omega).powi(2);
        assert_eq!(burgers_velocity(&p, p.x_edge + dx, (0.99 * c).sqrt()).unwrap(), 0.0);
        assert!(matches!(burgers_velocity(&p, 0.5, 1.0), Err(Error::InsideWell { .. })));
    }

    #[test]
    fn suppression_scalings() {
        let p = BurgersParams::new(1.0, 1.0, 1.0, 0.1, 0.1).unwrap();
        assert!((suppression_timescale(&p) - 10.0).abs() < 1e-12);
        let half = BurgersParams::new(1.0, 1.0, 1.0, 0.05, 0.1).unwrap();
        assert!((suppression_timescale(&half) - 20.0).abs() < 1e-12);
        let fast = BurgersParams::new(1.0, 1.0, 4.0, 0.1, 0.1).unwrap();
        assert!((suppression_timescale(&fast) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
    }
}

//! Stationary profiles `-E S = -S'' + λ S³ + V S` and the linearisation
//! around them.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexField, Grid1D, RealField};
use crate::linalg::{gmres, solve_tridiagonal};
use crate::potentials::{PotentialShape, PotentialSpec};

/// What the stationary solve is pinned to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileTarget {
    /// Fixed chemical-potential parameter `E`.
    Energy(f64),
    /// Fixed mass `∫S²`; `E` is the computed eigenvalue.
    Mass(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Stop when `‖residual‖∞ / ‖S‖∞` falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Imaginary-time step of the globaliser.
    pub imaginary_dt: f64,
    /// Step used for `∂E S`; `None` skips the derivative.
    pub derivative_step: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_iterations: 10_000, imaginary_dt: 5e-3, derivative_step: Some(0.05) }
    }
}

/// Both width measures of a profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Width {
    /// `∫ x² S dx`.
    pub first_moment_integral: f64,
    /// `(∫ x² S dx)^(-1/2)`.
    pub beta_moment: f64,
    /// `∫ x² S² dx / ∫ S² dx`.
    pub variance: f64,
    /// `variance^(-1/2)`.
    pub beta_variance: f64,
}

/// A stationary solution with its parameters.
#[derive(Clone, Debug)]
pub struct SolitonProfile {
    pub e: f64,
    pub lambda: f64,
    pub s: RealField,
    pub ds_de: Option<RealField>,
    pub potential: PotentialSpec,
    /// Final `‖residual‖∞ / ‖S‖∞`.
    pub residual: f64,
    /// Residual after each Newton iteration.
    pub history: Vec<f64>,
}

impl SolitonProfile {
    /// Closed-form free soliton `√(2E/|λ|) sech(√E x)` with its exact `∂E S`.
    pub fn free_sech(grid: Arc<Grid1D>, e: f64, lambda: f64) -> Result<Self> {
        if !(lambda < 0.0 && e > 0.0) {
            return Err(Error::InvalidParameter("free soliton needs λ < 0 and E > 0".into()));
        }
        let a = (2.0 / lambda.abs()).sqrt();
        let r = e.sqrt();
        let s = RealField::from_fn(grid.clone(), |x| a * r / (r * x).cosh())?;
        let ds = RealField::from_fn(grid, |x| {
            let sech = 1.0 / (r * x).cosh();
            a * (0.5 / r) * sech * (1.0 - r * x * (r * x).tanh())
        })?;
        Ok(Self {
            e,
            lambda,
            s,
            ds_de: Some(ds),
            potential: PotentialSpec::free(),
            residual: 0.0,
            history: Vec::new(),
        })
    }

    pub fn grid(&self) -> &Arc<Grid1D> {
        self.s.grid()
    }

    pub fn mass(&self) -> f64 {
        self.s.values().iter().map(|v| v * v).sum::<f64>() * self.grid().dx()
    }

    pub fn width(&self) -> Width {
        width(&self.s)
    }

    /// `∂E S`, or an error when it was not computed.
    pub fn ds_de(&self) -> Result<&RealField> {
        self.ds_de
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("profile has no ∂E S".into()))
    }

    /// Recomputes `‖-S'' + λS³ + VS + ES‖∞ / ‖S‖∞` on the profile's grid.
    pub fn check_residual(&self) -> Result<f64> {
        let p = Problem::new(self.grid(), &self.potential, self.lambda)?;
        Ok(p.scaled_residual(self.s.values(), self.e))
    }
}

/// Both width integrals of a profile centred at the origin.
pub fn width(s: &RealField) -> Width {
    let g = s.grid();
    let dx = g.dx();
    let mut first = 0.0;
    let mut second = 0.0;
    let mut mass = 0.0;
    for (i, &v) in s.values().iter().enumerate() {
        let x = g.x(i);
        first += x * x * v;
        second += x * x * v * v;
        mass += v * v;
    }
    let first = first * dx;
    let variance = second / mass;
    Width {
        first_moment_integral: first,
        beta_moment: first.powf(-0.5),
        variance,
        beta_variance: variance.powf(-0.5),
    }
}

/// Relative tolerance of the inner Krylov solves. Round-off in the spectral
/// Laplacian stalls GMRES near 1e-12, so tighter values only waste iterations.
const LINEAR_TOL: f64 = 1e-10;

/// Discretised profile equation on a fixed grid.
struct Problem {
    grid: Arc<Grid1D>,
    v: Vec<f64>,
    lambda: f64,
    symmetric: bool,
}

impl Problem {
    fn new(grid: &Arc<Grid1D>, potential: &PotentialSpec, lambda: f64) -> Result<Self> {
        if !grid.is_periodic() {
            return Err(Error::NotPeriodic);
        }
        let v = potential.evaluate(grid)?.into_values();
        let symmetric = grid.is_symmetric() && potential.is_even();
        Ok(Self { grid: grid.clone(), v, lambda, symmetric })
    }

    fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        self.grid.spectral_derivative_real(f, 2)
    }

    /// `-S'' + λS³ + VS + ES`.
    fn residual(&self, s: &[f64], e: f64) -> Vec<f64> {
        let lap = self.laplacian(s);
        s.iter()
            .zip(&lap)
            .zip(&self.v)
            .map(|((&si, &li), &vi)| -li + self.lambda * si * si * si + (vi + e) * si)
            .collect()
    }

    fn scaled_residual(&self, s: &[f64], e: f64) -> f64 {
        max_abs(&self.residual(s, e)) / max_abs(s)
    }

    fn jacobian(&self, s: &[f64], e: f64, d: &[f64]) -> Vec<f64> {
        let lap = self.laplacian(d);
        (0..d.len())
            .map(|i| -lap[i] + (3.0 * self.lambda * s[i] * s[i] + self.v[i] + e) * d[i])
            .collect()
    }

    /// Tridiagonal `-∂² + max(3λS² + V + E, c)` preconditioner diagonal.
    fn preconditioner_diag(&self, s: &[f64], e: f64) -> Vec<f64> {
        let h2 = self.grid.dx().powi(2);
        let floor = 0.25 * e.abs().max(0.1);
        s.iter()
            .zip(&self.v)
            .map(|(&si, &vi)| 2.0 / h2 + (3.0 * self.lambda * si * si + vi + e).max(floor))
            .collect()
    }

    fn symmetrize(&self, s: &mut [f64]) {
        if !self.symmetric {
            return;
        }
        let n = s.len();
        let orig = s.to_vec();
        for j in 0..n {
            s[j] = 0.5 * (orig[j] + orig[(n - j) % n]);
        }
    }

    fn mass(&self, s: &[f64]) -> f64 {
        s.iter().map(|v| v * v).sum::<f64>() * self.grid.dx()
    }

    /// Newton iteration at fixed `E`.
    fn newton_fixed_e(
        &self,
        mut s: Vec<f64>,
        e: f64,
        opts: &SolverOptions,
        history: &mut Vec<f64>,
    ) -> Result<Vec<f64>> {
        let h2 = self.grid.dx().powi(2);
        let max_newton = 60.min(opts.max_iterations);
        for _ in 0..max_newton {
            let f = self.residual(&s, e);
            let r = max_abs(&f) / max_abs(&s);
            history.push(r);
            if !r.is_finite() {
                break;
            }
            if r < opts.tolerance {
                return Ok(s);
            }
            let diag = self.preconditioner_diag(&s, e);
            let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
            let out = gmres(
                |d| self.jacobian(&s, e, d),
                |v| solve_tridiagonal(&diag, -1.0 / h2, v),
                &rhs,
                LINEAR_TOL,
                60,
                1200,
            );
            log::trace!("gmres: {} iterations, relative residual {:e}", out.iterations, out.relative_residual);
            let f_norm = l2(&f);
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..12 {
                let mut trial: Vec<f64> = s.iter().zip(&out.x).map(|(a, d)| a + step * d).collect();
                self.symmetrize(&mut trial);
                let tn = l2(&self.residual(&trial, e));
                if tn.is_finite() && tn < f_norm {
                    s = trial;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Err(Error::NotConverged {
            what: format!("Newton at fixed E = {e}"),
            iterations: history.len(),
            residual: history.last().copied().unwrap_or(f64::NAN),
            history: history.clone(),
        })
    }

    /// Bordered Newton on `(S, E)` with `∫S² = mass`.
    fn newton_fixed_mass(
        &self,
        mut s: Vec<f64>,
        mut e: f64,
        mass: f64,
        opts: &SolverOptions,
        history: &mut Vec<f64>,
    ) -> Result<(Vec<f64>, f64)> {
        let n = s.len();
        let dx = self.grid.dx();
        let h2 = dx * dx;
        let measure = |s: &[f64], e: f64| -> (Vec<f64>, f64) {
            let mut f = self.residual(s, e);
            f.push((self.mass(s) - mass) / mass);
            let r = (max_abs(&f[..n]) / max_abs(s)).max(f[n].abs());
            (f, r)
        };
        for _ in 0..60.min(opts.max_iterations) {
            let (f, r) = measure(&s, e);
            history.push(r);
            if !r.is_finite() {
                break;
            }
            if r < opts.tolerance {
                return Ok((s, e));
            }
            let diag = self.preconditioner_diag(&s, e);
            let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
            let apply = |d: &[f64]| -> Vec<f64> {
                let mut out = self.jacobian(&s, e, &d[..n]);
                out.iter_mut().zip(&s).for_each(|(o, si)| *o += si * d[n]);
                let dm: f64 = s.iter().zip(&d[..n]).map(|(a, b)| a * b).sum::<f64>() * 2.0 * dx;
                out.push(dm / mass);
                out
            };
            let pre = |v: &[f64]| -> Vec<f64> {
                let mut out = solve_tridiagonal(&diag, -1.0 / h2, &v[..n]);
                out.push(v[n]);
                out
            };
            let out = gmres(apply, pre, &rhs, LINEAR_TOL, 80, 1600);
            log::trace!("gmres: {} iterations, relative residual {:e}", out.iterations, out.relative_residual);
            let f_norm = l2(&f);
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..12 {
                let mut trial: Vec<f64> =
                    s.iter().zip(&out.x[..n]).map(|(a, d)| a + step * d).collect();
                self.symmetrize(&mut trial);
                let te = e + step * out.x[n];
                let (tf, _) = measure(&trial, te);
                let tn = l2(&tf);
                if tn.is_finite() && tn < f_norm {
                    s = trial;
                    e = te;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Err(Error::NotConverged {
            what: format!("bordered Newton at mass {mass}"),
            iterations: history.len(),
            residual: history.last().copied().unwrap_or(f64::NAN),
            history: history.clone(),
        })
    }

    /// Normalised imaginary-time split-step flow at fixed mass.
    fn imaginary_time(&self, mut s: Vec<f64>, mass: f64, opts: &SolverOptions) -> Result<(Vec<f64>, f64)> {
        let dt = opts.imaginary_dt;
        let k = self.grid.wavenumbers();
        let half: Vec<f64> = k.iter().map(|k| (-0.5 * dt * k * k).exp()).collect();
        let renorm = |s: &mut Vec<f64>| {
            let m = self.mass(s);
            let c = (mass / m).sqrt();
            s.iter_mut().for_each(|v| *v *= c);
        };
        renorm(&mut s);
        let start_peak = max_abs(&s);
        let kinetic = |s: &[f64]| -> Vec<f64> {
            let mut buf: Vec<Complex64> = s.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            self.grid.forward(&mut buf);
            buf.iter_mut().zip(&half).for_each(|(z, h)| *z *= h);
            self.grid.inverse(&mut buf);
            buf.into_iter().map(|z| z.re).collect()
        };
        for it in 0..opts.max_iterations {
            let prev = s.clone();
            let mut next = kinetic(&s);
            next.iter_mut()
                .zip(&self.v)
                .for_each(|(u, vi)| *u *= (-dt * (vi + self.lambda * *u * *u)).exp());
            let mut next = kinetic(&next);
            let m = self.mass(&next);
            if !m.is_finite() || max_abs(&next) > 1e8 * start_peak.max(1.0) {
                return Err(Error::Collapse(format!("imaginary-time iteration {it}")));
            }
            renorm(&mut next);
            self.symmetrize(&mut next);
            s = next;
            let change = s.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if change / max_abs(&s) < 1e-6 * dt {
                break;
            }
        }
        // Rayleigh quotient for E: -E = <S, (-∂² + V + λS²) S>/<S,S>.
        let lap = self.laplacian(&s);
        let num: f64 = (0..s.len())
            .map(|i| s[i] * (-lap[i] + (self.v[i] + self.lambda * s[i] * s[i]) * s[i]))
            .sum();
        let den: f64 = s.iter().map(|v| v * v).sum();
        Ok((s, -num / den))
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn initial_guess(grid: &Grid1D, potential: &PotentialSpec, lambda: f64, e_hint: f64) -> Vec<f64> {
    match potential.shape {
        PotentialShape::Harmonic { omega } if e_hint <= 0.0 => {
            (0..grid.n()).map(|i| (-0.25 * omega * grid.x(i).powi(2)).exp()).collect()
        }
        _ => {
            let e = e_hint.max(0.05);
            let a = (2.0 * e / lambda.abs()).sqrt();
            (0..grid.n()).map(|i| a / (e.sqrt() * grid.x(i)).cosh()).collect()
        }
    }
}

/// Enforces positivity of the ground state (global sign) and the decay requirement.
fn finish(grid: &Arc<Grid1D>, mut s: Vec<f64>) -> Result<RealField> {
    let peak_idx = (0..s.len()).max_by(|&a, &b| s[a].abs().partial_cmp(&s[b].abs()).unwrap()).unwrap();
    if s[peak_idx] < 0.0 {
        s.iter_mut().for_each(|v| *v = -*v);
    }
    let peak = s[peak_idx].abs();
    let edge = s[0].abs().max(s[s.len() - 1].abs());
    if edge > 1e-10 * peak.max(1.0) {
        log::warn!("profile has not decayed at the domain edge ({edge:e})");
    }
    if let Some(i) = s.iter().position(|&v| v < -1e-8 * peak) {
        return Err(Error::InvalidParameter(format!(
            "solver converged to a sign-changing state (node near x = {})",
            grid.x(i)
        )));
    }
    RealField::new(grid.clone(), s)
}

/// Solves the stationary problem for the given target.
pub fn solve_profile(
    potential: &PotentialSpec,
    lambda: f64,
    target: ProfileTarget,
    grid: &Arc<Grid1D>,
    opts: &SolverOptions,
) -> Result<SolitonProfile> {
    if !(lambda < 0.0) {
        return Err(Error::InvalidParameter(format!("soliton profiles need λ < 0, got {lambda}")));
    }
    let problem = Problem::new(grid, potential, lambda)?;
    let mut history = Vec::new();
    let (s, e) = match target {
        ProfileTarget::Mass(mass) => {
            if !(mass > 0.0) {
                return Err(Error::InvalidParameter("target mass must be positive".into()));
            }
            let e_hint = (lambda * mass / 4.0).powi(2);
            let guess = initial_guess(grid, potential, lambda, e_hint);
            let (s0, e0) = problem.imaginary_time(guess, mass, opts)?;
            problem.newton_fixed_mass(s0, e0, mass, opts, &mut history)?
        }
        ProfileTarget::Energy(e) => {
            let guess = initial_guess(grid, potential, lambda, e);
            match problem.newton_fixed_e(guess.clone(), e, opts, &mut history) {
                Ok(s) => (s, e),
                Err(_) => {
                    history.clear();
                    let mass = problem.mass(&guess);
                    let (s0, e0) = problem.imaginary_time(guess, mass, opts)?;
                    let (s1, e1) = problem.newton_fixed_mass(s0, e0, mass, opts, &mut history)?;
                    (continue_in_e(&problem, s1, e1, e, opts, &mut history)?, e)
                }
            }
        }
    };
    let s = finish(grid, s)?;
    let residual = problem.scaled_residual(s.values(), e);
    let mut profile = SolitonProfile {
        e,
        lambda,
        s,
        ds_de: None,
        potential: potential.clone(),
        residual,
        history,
    };
    if let Some(step) = opts.derivative_step {
        profile.ds_de = Some(de_derivative_with(&problem, &profile, step, opts)?);
    }
    Ok(profile)
}

/// Moves a converged fixed-`E` solution to `e_target` in adaptive steps.
fn continue_in_e(
    problem: &Problem,
    mut s: Vec<f64>,
    mut e: f64,
    e_target: f64,
    opts: &SolverOptions,
    history: &mut Vec<f64>,
) -> Result<Vec<f64>> {
    let mut step = e_target - e;
    let mut guard = 0;
    while (e_target - e).abs() > 0.0 {
        guard += 1;
        if guard > 200 || step.abs() < 1e-8 {
            return Err(Error::NotConverged {
                what: format!("continuation to E = {e_target}"),
                iterations: guard,
                residual: history.last().copied().unwrap_or(f64::NAN),
                history: history.clone(),
            });
        }
        let next_e = if (e_target - e).abs() <= step.abs() { e_target } else { e + step };
        history.clear();
        match problem.newton_fixed_e(s.clone(), next_e, opts, history) {
            Ok(ns) => {
                s = ns;
                e = next_e;
                step *= 1.5;
            }
            Err(_) => step *= 0.5,
        }
    }
    Ok(s)
}

fn de_derivative_with(
    problem: &Problem,
    profile: &SolitonProfile,
    step: f64,
    opts: &SolverOptions,
) -> Result<RealField> {
    if !(step > 0.0) {
        return Err(Error::InvalidParameter("dE must be positive".into()));
    }
    let base = profile.s.values().to_vec();
    let solve_at = |e: f64| -> Result<Vec<f64>> {
        let mut h = Vec::new();
        problem.newton_fixed_e(base.clone(), e, opts, &mut h)
    };
    let e = profile.e;
    let sp = solve_at(e + step)?;
    let sm = solve_at(e - step)?;
    let sp2 = solve_at(e + 0.5 * step)?;
    let sm2 = solve_at(e - 0.5 * step)?;
    let values = (0..base.len())
        .map(|i| {
            let d1 = (sp[i] - sm[i]) / (2.0 * step);
            let d2 = (sp2[i] - sm2[i]) / step;
            (4.0 * d2 - d1) / 3.0
        })
        .collect();
    RealField::new(profile.grid().clone(), values)
}

/// Richardson-extrapolated central difference `∂E S` at step `de`.
pub fn de_derivative(profile: &SolitonProfile, de: f64) -> Result<RealField> {
    let problem = Problem::new(profile.grid(), &profile.potential, profile.lambda)?;
    de_derivative_with(&problem, profile, de, &SolverOptions::default())
}

/// Fixed-`E` Newton solve warm-started from `warm`; no derivative is computed.
pub fn solve_at_energy(
    potential: &PotentialSpec,
    lambda: f64,
    e: f64,
    warm: &RealField,
    opts: &SolverOptions,
) -> Result<RealField> {
    let problem = Problem::new(warm.grid(), potential, lambda)?;
    let mut h = Vec::new();
    let s = problem.newton_fixed_e(warm.values().to_vec(), e, opts, &mut h)?;
    finish(warm.grid(), s)
}

/// Plain (non-extrapolated) central difference, for order checks.
pub fn de_central_difference(profile: &SolitonProfile, de: f64) -> Result<RealField> {
    let problem = Problem::new(profile.grid(), &profile.potential, profile.lambda)?;
    let opts = SolverOptions::default();
    let base = profile.s.values().to_vec();
    let mut h = Vec::new();
    let sp = problem.newton_fixed_e(base.clone(), profile.e + de, &opts, &mut h)?;
    let sm = problem.newton_fixed_e(base, profile.e - de, &opts, &mut h)?;
    RealField::new(
        profile.grid().clone(),
        sp.iter().zip(&sm).map(|(a, b)| (a - b) / (2.0 * de)).collect(),
    )
}

/// A pair `K = (u, w)` acted on by the 2×2 block operators.
#[derive(Clone, Debug)]
pub struct Pair {
    pub top: ComplexField,
    pub bottom: ComplexField,
}

impl Pair {
    pub fn from_real(top: &RealField, bottom: &RealField) -> Self {
        Self { top: top.to_complex(), bottom: bottom.to_complex() }
    }

    pub fn norm(&self) -> f64 {
        (self.top.norm_sq() + self.bottom.norm_sq()).sqrt()
    }

    /// `σ_z K = (u, -w)`.
    pub fn sigma_z(&self) -> Self {
        Self { top: self.top.clone(), bottom: self.bottom.scale(Complex64::new(-1.0, 0.0)) }
    }
}

/// Kernel identities measured at construction.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KernelResiduals {
    /// `‖H_D (S, -S)‖ / ‖(S, -S)‖`.
    pub hd_s: f64,
    /// `‖H_D² ξ₁‖ / ‖ξ₁‖` with `ξ₁ = (∂E S, ∂E S)`.
    pub hd2_xi1: Option<f64>,
}

/// Linearised operators around a profile.
///
/// `H` acts on `(χ, χ*)`:
///
/// ```text
/// H = [ -∂² - 2(S'/S)∂ + λS²        λS²              ]
///     [ -λS²                        ∂² + 2(S'/S)∂ - λS² ]
/// ```
///
/// and `H_D = S H S⁻¹`. Using the profile equation, `S H S⁻¹` equals
///
/// ```text
/// [ -∂² + V + E + 2λS²     λS²                  ]
/// [ -λS²                   ∂² - V - E - 2λS²    ]
/// ```
///
/// which is applied directly, so no division by `S` is needed. The first
/// order term of `H` is only kept on the window where `S > floor·max S` and is
/// tapered to zero outside it.
#[derive(Clone, Debug)]
pub struct LinearizedOperators {
    profile: SolitonProfile,
    v: Vec<f64>,
    log_derivative: Vec<f64>,
    window: (f64, f64),
    kernel: KernelResiduals,
}

/// Relative floor on `S` for the `S⁻¹`-weighted terms.
pub const S_FLOOR: f64 = 1e-8;

impl LinearizedOperators {
    pub fn profile(&self) -> &SolitonProfile {
        &self.profile
    }

    /// Window `[lo, hi]` where `S > S_FLOOR·max S`.
    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    pub fn kernel_residuals(&self) -> KernelResiduals {
        self.kernel
    }

    fn s2(&self) -> impl Iterator<Item = f64> + '_ {
        self.profile.s.values().iter().map(|v| v * v)
    }

    /// `H K` on `K = (u, w)`.
    pub fn apply_h(&self, k: &Pair) -> Result<Pair> {
        let g = self.profile.grid();
        let lam = self.profile.lambda;
        let ux = g.spectral_derivative(k.top.values(), 1);
        let uxx = g.spectral_derivative(k.top.values(), 2);
        let wx = g.spectral_derivative(k.bottom.values(), 1);
        let wxx = g.spectral_derivative(k.bottom.values(), 2);
        let mut top = Vec::with_capacity(g.n());
        let mut bottom = Vec::with_capacity(g.n());
        for (i, s2) in self.s2().enumerate() {
            let l = self.log_derivative[i];
            let u = k.top.values()[i];
            let w = k.bottom.values()[i];
            top.push(-uxx[i] - 2.0 * l * ux[i] + lam * s2 * (u + w));
            bottom.push(wxx[i] + 2.0 * l * wx[i] - lam * s2 * (u + w));
        }
        Ok(Pair { top: ComplexField::new(g.clone(), top)?, bottom: ComplexField::new(g.clone(), bottom)? })
    }

    /// `H_D K` on `K = (u, w)`.
    pub fn apply_hd(&self, k: &Pair) -> Result<Pair> {
        let g = self.profile.grid();
        let lam = self.profile.lambda;
        let e = self.profile.e;
        let uxx = g.spectral_derivative(k.top.values(), 2);
        let wxx = g.spectral_derivative(k.bottom.values(), 2);
        let mut top = Vec::with_capacity(g.n());
        let mut bottom = Vec::with_capacity(g.n());
        for (i, s2) in self.s2().enumerate() {
            let d = self.v[i] + e + 2.0 * lam * s2;
            let u = k.top.values()[i];
            let w = k.bottom.values()[i];
            top.push(-uxx[i] + d * u + lam * s2 * w);
            bottom.push(-lam * s2 * u + wxx[i] - d * w);
        }
        Ok(Pair { top: ComplexField::new(g.clone(), top)?, bottom: ComplexField::new(g.clone(), bottom)? })
    }

    /// `(∂x S, ∂x S)`.
    pub fn eta1(&self) -> Result<Pair> {
        let sx = self.profile.s.derivative(1, crate::grid::Method::Spectral)?;
        Ok(Pair::from_real(&sx, &sx))
    }

    /// `(x S, -x S)`.
    pub fn eta2(&self) -> Result<Pair> {
        let g = self.profile.grid();
        let xs: Vec<f64> = self.profile.s.values().iter().enumerate().map(|(i, v)| g.x(i) * v).collect();
        let top = RealField::new(g.clone(), xs.clone())?;
        let bottom = RealField::new(g.clone(), xs.iter().map(|v| -v).collect())?;
        Ok(Pair::from_real(&top, &bottom))
    }

    /// `(∂E S, ∂E S)`.
    pub fn xi1(&self) -> Result<Pair> {
        let d = self.profile.ds_de()?;
        Ok(Pair::from_real(d, d))
    }

    /// `(S, -S)`.
    pub fn s_pair(&self) -> Result<Pair> {
        let s = &self.profile.s;
        Ok(Pair::from_real(s, &s.map(|v| -v)?))
    }
}

/// Builds the linearised operators; `window` restricts where `S⁻¹` terms are
/// needed and must lie inside the region where `S` exceeds the floor.
pub fn build_linearized(profile: &SolitonProfile, window: Option<(f64, f64)>) -> Result<LinearizedOperators> {
    let g = profile.grid().clone();
    let s = profile.s.values();
    let peak = max_abs(s);
    let floor = S_FLOOR * peak;
    let peak_idx = (0..s.len()).max_by(|&a, &b| s[a].partial_cmp(&s[b]).unwrap()).unwrap();
    let mut lo = peak_idx;
    while lo > 0 && s[lo - 1] > floor {
        lo -= 1;
    }
    let mut hi = peak_idx;
    while hi + 1 < s.len() && s[hi + 1] > floor {
        hi += 1;
    }
    let support = (g.x(lo), g.x(hi));
    if let Some((a, b)) = window {
        for (i, &v) in s.iter().enumerate() {
            let x = g.x(i);
            if x >= a && x <= b && v <= floor {
                return Err(Error::ProfileFloor { lo: a, hi: b });
            }
        }
    }
    let (a, b) = window.unwrap_or(support);
    let ramp = 0.05 * (b - a);
    let sx = g.spectral_derivative_real(s, 1);
    let log_derivative = (0..s.len())
        .map(|i| {
            let x = g.x(i);
            if s[i] <= floor || x < a || x > b {
                return 0.0;
            }
            let d = (x - a).min(b - x);
            let taper = if d >= ramp { 1.0 } else { (0.5 * std::f64::consts::PI * d / ramp).sin().powi(2) };
            taper * sx[i] / s[i]
        })
        .collect();
    let v = profile.potential.evaluate(&g)?.into_values();
    let mut ops = LinearizedOperators {
        profile: profile.clone(),
        v,
        log_derivative,
        window: (a, b),
        kernel: KernelResiduals { hd_s: f64::NAN, hd2_xi1: None },
    };
    let sp = ops.s_pair()?;
    let hd_s = ops.apply_hd(&sp)?.norm() / sp.norm();
    let hd2_xi1 = match ops.xi1() {
        Ok(xi) => Some(ops.apply_hd(&ops.apply_hd(&xi)?)?.norm() / xi.norm()),
        Err(_) => None,
    };
    ops.kernel = KernelResiduals { hd_s, hd2_xi1 };
    Ok(ops)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sech_grid() -> Arc<Grid1D> {
        Grid1D::new(1024, -40.0, 40.0).unwrap()
    }

    #[test]
    fn free_sech_solve() {
        let g = sech_grid();
        let p = solve_profile(&PotentialSpec::free(), -2.0, ProfileTarget::Energy(1.0), &g, &SolverOptions::default())
            .unwrap();
        assert!(p.residual < 1e-10);
        for (i, v) in p.s.values().iter().enumerate() {
            assert!((v - 1.0 / g.x(i).cosh()).abs() < 1e-8);
        }
    }

    #[test]
    fn mass_target_recovers_e() {
        let g = sech_grid();
        let p = solve_profile(&PotentialSpec::free(), -2.0, ProfileTarget::Mass(2.0), &g, &SolverOptions::default())
            .unwrap();
        assert!((p.e - 1.0).abs() < 1e-9, "{}", p.e);
    }

    #[test]
    fn rejects_repulsive() {
        let g = sech_grid();
        let r = solve_profile(&PotentialSpec::free(), 1.0, ProfileTarget::Energy(1.0), &g, &SolverOptions::default());
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn sigma_z_is_an_involution() {
        let g = Grid1D::new(64, -8.0, 8.0).unwrap();
        let p = SolitonProfile::free_sech(g, 1.0, -2.0).unwrap();
        let ops = build_linearized(&p, None).unwrap();
        let k = ops.eta2().unwrap();
        let back = k.sigma_z().sigma_z();
        assert_eq!(back.top.values(), k.top.values());
        assert_eq!(back.bottom.values(), k.bottom.values());
    }

    #[test]
    fn window_below_floor_is_rejected() {
        let g = sech_grid();
        let p = SolitonProfile::free_sech(g, 1.0, -2.0).unwrap();
        let r = build_linearized(&p, Some((-30.0, 30.0)));
        assert!(matches!(r, Err(Error::ProfileFloor { .. })));
    }
}

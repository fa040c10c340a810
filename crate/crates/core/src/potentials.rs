//! Trap potentials and the shifted difference `W(x) = V(x) - V(x - X)`.
//!
//! Units: `m = 1/2`, `ħ = 1`, so the harmonic trap is `ω²x²/4`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid1D, RealField};

fn default_true() -> bool {
    true
}

/// Shape of the external potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialShape {
    /// `V = 0`.
    Free,
    /// `V = ω²x²/4`.
    Harmonic { omega: f64 },
    /// Piecewise-harmonic well: harmonic for `|x| ≤ 1/ω`, inverted harmonic
    /// on the transition band up to `(1+δ)/ω`, harmonic again up to `2/ω`,
    /// zero beyond.
    TruncatedWell {
        omega: f64,
        delta: f64,
        /// Add per-branch constants so that V is continuous and zero outside.
        #[serde(default = "default_true")]
        continuity_fix: bool,
        /// Coefficient `c` of the optional cubic term `c·ω²·(|x| - 1/ω)³` on the
        /// transition branch.
        #[serde(default)]
        cubic: f64,
    },
    /// Samples on a periodic grid `[x_min, x_max)`; linear interpolation in between.
    Tabulated { x_min: f64, x_max: f64, values: Vec<f64> },
}

/// A potential shape plus an additive offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub shape: PotentialShape,
    #[serde(default)]
    pub offset: f64,
}

/// Affine fit `α(x) ≈ α₀ x + β₀` of the quadratic shift coefficient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionForce {
    pub alpha0: f64,
    pub beta0: f64,
    /// RMS deviation of `α(x)` from the affine fit over the band.
    pub residual_rms: f64,
    /// Set when the residual exceeds the local-quadratic threshold.
    pub flagged: bool,
    /// Whether `sign(x)·α₀ > 0` holds on the right transition band.
    pub outgoing_sign: bool,
    /// Band centre and sampled `(x, α(x))` pairs.
    pub x_center: f64,
    pub samples: Vec<(f64, f64)>,
}

/// Threshold on the RMS residual of the affine fit of `α(x)`.
pub const LOCAL_QUADRATIC_TOLERANCE: f64 = 1e-3;

impl PotentialSpec {
    pub fn free() -> Self {
        Self { shape: PotentialShape::Free, offset: 0.0 }
    }

    pub fn harmonic(omega: f64) -> Self {
        Self { shape: PotentialShape::Harmonic { omega }, offset: 0.0 }
    }

    pub fn truncated_well(omega: f64, delta: f64) -> Self {
        Self {
            shape: PotentialShape::TruncatedWell { omega, delta, continuity_fix: true, cubic: 0.0 },
            offset: 0.0,
        }
    }

    /// Tabulated potential sampled on `grid`.
    pub fn tabulated(field: &RealField) -> Self {
        let g = field.grid();
        Self {
            shape: PotentialShape::Tabulated {
                x_min: g.x_min(),
                x_max: g.x_max(),
                values: field.values().to_vec(),
            },
            offset: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.offset.is_finite() {
            return Err(Error::InvalidParameter("potential offset must be finite".into()));
        }
        match &self.shape {
            PotentialShape::Free => Ok(()),
            PotentialShape::Harmonic { omega } => positive("omega", *omega),
            PotentialShape::TruncatedWell { omega, delta, cubic, .. } => {
                positive("omega", *omega)?;
                if !(*delta > 0.0 && *delta < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "truncated well needs 0 < delta < 1, got {delta}"
                    )));
                }
                if !cubic.is_finite() {
                    return Err(Error::InvalidParameter("cubic coefficient must be finite".into()));
                }
                Ok(())
            }
            PotentialShape::Tabulated { x_min, x_max, values } => {
                if values.len() < 2 || !(x_max > x_min) {
                    return Err(Error::InvalidParameter("tabulated potential is empty".into()));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter("tabulated potential not finite".into()));
                }
                Ok(())
            }
        }
    }

    /// Trap frequency, when the shape has one.
    pub fn omega(&self) -> Option<f64> {
        match self.shape {
            PotentialShape::Harmonic { omega } | PotentialShape::TruncatedWell { omega, .. } => {
                Some(omega)
            }
            _ => None,
        }
    }

    /// Whether `V(-x) = V(x)` holds by construction.
    pub fn is_even(&self) -> bool {
        !matches!(self.shape, PotentialShape::Tabulated { .. })
    }

    /// Point evaluation.
    pub fn value_at(&self, x: f64) -> f64 {
        self.offset
            + match &self.shape {
                PotentialShape::Free => 0.0,
                PotentialShape::Harmonic { omega } => 0.25 * omega * omega * x * x,
                PotentialShape::TruncatedWell { omega, delta, continuity_fix, cubic } => {
                    well_value(*omega, *delta, *continuity_fix, *cubic, x)
                }
                PotentialShape::Tabulated { x_min, x_max, values } => {
                    tabulated_value(*x_min, *x_max, values, x)
                }
            }
    }

    /// Point evaluation of `V'(x)`. At branch junctions the inner branch is used.
    pub fn derivative_at(&self, x: f64) -> f64 {
        match &self.shape {
            PotentialShape::Free => 0.0,
            PotentialShape::Harmonic { omega } => 0.5 * omega * omega * x,
            PotentialShape::TruncatedWell { omega, delta, cubic, .. } => {
                let w = *omega;
                let s = x.abs();
                let sign = if x < 0.0 { -1.0 } else { 1.0 };
                let (e1, e2, e3) = (1.0 / w, (1.0 + delta) / w, 2.0 / w);
                let ds = if s <= e1 {
                    0.5 * w * w * s
                } else if s <= e2 {
                    -0.5 * w * w * (s - e1) + 3.0 * cubic * w * w * (s - e1).powi(2)
                } else if s <= e3 {
                    0.5 * w * w * (s - e3)
                } else {
                    0.0
                };
                sign * ds
            }
            PotentialShape::Tabulated { x_min, x_max, values } => {
                let n = values.len();
                let h = (x_max - x_min) / n as f64;
                (tabulated_value(*x_min, *x_max, values, x + 0.5 * h)
                    - tabulated_value(*x_min, *x_max, values, x - 0.5 * h))
                    / h
            }
        }
    }

    /// Samples V on a grid.
    pub fn evaluate(&self, grid: &Arc<Grid1D>) -> Result<RealField> {
        self.validate()?;
        if let PotentialShape::TruncatedWell { omega, .. } = self.shape {
            let edge = 2.0 / omega;
            if grid.x_min() > -edge || grid.x_max() <= edge {
                return Err(Error::GridTooSmall(format!(
                    "grid [{}, {}] does not cover the well support [-{edge}, {edge}]",
                    grid.x_min(),
                    grid.x_max()
                )));
            }
        }
        if let PotentialShape::Tabulated { x_min, x_max, values } = &self.shape {
            if values.len() == grid.n() && *x_min == grid.x_min() && *x_max == grid.x_max() {
                let v = values.iter().map(|v| v + self.offset).collect();
                return RealField::new(grid.clone(), v);
            }
        }
        RealField::from_fn(grid.clone(), |x| self.value_at(x))
    }

    /// `W(x) = V(x) - V(x - X)` on the grid.
    pub fn shifted_difference(&self, grid: &Arc<Grid1D>, shift: f64) -> Result<RealField> {
        self.evaluate(grid)?;
        RealField::from_fn(grid.clone(), |x| self.value_at(x) - self.value_at(x - shift))
    }

    /// Positive abscissae where branches of the potential meet.
    fn junctions(&self) -> Vec<f64> {
        match self.shape {
            PotentialShape::TruncatedWell { omega, delta, .. } => vec![1.0 / omega, (1.0 + delta) / omega, 2.0 / omega],
            _ => Vec::new(),
        }
    }

    /// Fits `V(x) - V(x - X) ≈ V'(x) X - α(x) ω² X² + O(X³)` for each `x` of the
    /// right transition band `|x - 1/ω| ≤ δ/ω`, then fits `α(x) ≈ α₀ x + β₀`.
    ///
    /// The X² coefficient of a polynomial fit in `X` is `-V''/2`, and `α` is
    /// normalised as `α(x) = V''(x)/ω²`, so a harmonic branch gives `α ≡ 1/2`.
    pub fn transition_force_coefficients(&self) -> Result<TransitionForce> {
        self.validate()?;
        let (omega, delta) = match self.shape {
            PotentialShape::TruncatedWell { omega, delta, .. } => (omega, delta),
            // The harmonic trap has no transition band; fit over the same
            // neighbourhood of 1/ω as a reference.
            PotentialShape::Harmonic { omega } => (omega, 0.1),
            _ => {
                return Err(Error::InvalidParameter(
                    "transition coefficients need a harmonic or truncated-well potential".into(),
                ))
            }
        };
        self.force_fit(omega, delta, 1e-4 / omega)
    }

    /// Same fit with an explicit shift step `h` for the polynomial in `X`.
    /// Samples six shifts `±h, ±2h, ±3h`; points whose stencil straddles a
    /// branch junction are skipped, since `V''` is singular there.
    pub fn force_fit(&self, omega: f64, delta: f64, h: f64) -> Result<TransitionForce> {
        let x_center = 1.0 / omega;
        let half = delta / omega;
        let m = 201;
        let shifts: Vec<f64> = (-3..=3).filter(|&j| j != 0).map(|j| j as f64 * h).collect();
        let junctions = self.junctions();
        let mut samples = Vec::with_capacity(m);
        for i in 0..m {
            let x = x_center - half + 2.0 * half * i as f64 / (m - 1) as f64;
            if junctions.iter().any(|j| (x - j).abs() <= 3.0 * h * (1.0 + 1e-9)) {
                continue;
            }
            // Least squares for W = c1 X + c2 X² + c3 X³.
            let rows: Vec<[f64; 3]> = shifts.iter().map(|&s| [s, s * s, s * s * s]).collect();
            let rhs: Vec<f64> =
                shifts.iter().map(|&s| self.value_at(x) - self.value_at(x - s)).collect();
            let c = least_squares3(&rows, &rhs);
            samples.push((x, -2.0 * c[1] / (omega * omega)));
        }
        let (alpha0, beta0) = affine_fit(&samples);
        let residual_rms = (samples
            .iter()
            .map(|(x, a)| (a - alpha0 * x - beta0).powi(2))
            .sum::<f64>()
            / samples.len() as f64)
            .sqrt();
        Ok(TransitionForce {
            alpha0,
            beta0,
            residual_rms,
            flagged: residual_rms > LOCAL_QUADRATIC_TOLERANCE,
            outgoing_sign: alpha0 > 0.0,
            x_center,
            samples,
        })
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// Per-branch constants `(inner, transition)` making the well continuous with
/// the outermost branch anchored at zero.
pub fn well_constants(omega: f64, delta: f64, cubic: f64) -> (f64, f64) {
    let transition = 0.25 * (1.0 - delta).powi(2) + 0.25 * delta * delta - cubic * delta.powi(3) / omega;
    (transition - 0.25, transition)
}

fn well_value(omega: f64, delta: f64, fix: bool, cubic: f64, x: f64) -> f64 {
    let w = omega;
    let s = x.abs();
    let (e1, e2, e3) = (1.0 / w, (1.0 + delta) / w, 2.0 / w);
    let (c_in, c_tr) = if fix { well_constants(omega, delta, cubic) } else { (0.0, 0.0) };
    if s <= e1 {
        0.25 * w * w * s * s + c_in
    } else if s <= e2 {
        -0.25 * w * w * (s - e1).powi(2) + cubic * w * w * (s - e1).powi(3) + c_tr
    } else if s <= e3 {
        0.25 * w * w * (s - e3).powi(2)
    } else {
        0.0
    }
}

fn tabulated_value(x_min: f64, x_max: f64, values: &[f64], x: f64) -> f64 {
    let n = values.len();
    let len = x_max - x_min;
    let u = ((x - x_min) / len).rem_euclid(1.0) * n as f64;
    let i = (u.floor() as usize).min(n - 1);
    let f = u - i as f64;
    values[i] * (1.0 - f) + values[(i + 1) % n] * f
}

/// Solves the 3-parameter normal equations.
fn least_squares3(rows: &[[f64; 3]], rhs: &[f64]) -> [f64; 3] {
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for (r, y) in rows.iter().zip(rhs) {
        for i in 0..3 {
            b[i] += r[i] * y;
            for j in 0..3 {
                a[i][j] += r[i] * r[j];
            }
        }
    }
    solve3(a, b)
}

pub(crate) fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let piv = (col..3)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Ordinary least-squares line `y ≈ a x + b`.
pub(crate) fn affine_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let a = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (a, my - a * mx)
}

//! Uniform grids, sampled fields, derivatives and quadrature.
//!
//! Quadrature is the rectangle rule, which is spectrally accurate for periodic
//! or fully decayed integrands. Derivatives are spectral (FFT) or second-order
//! central differences.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Derivative discretisation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Spectral,
    CentralDifference,
}

/// Uniform 1D grid with cached FFT plans.
pub struct Grid1D {
    n: usize,
    x_min: f64,
    x_max: f64,
    dx: f64,
    periodic: bool,
    wavenumbers: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid1D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid1D")
            .field("n", &self.n)
            .field("x_min", &self.x_min)
            .field("x_max", &self.x_max)
            .field("periodic", &self.periodic)
            .finish()
    }
}

impl PartialEq for Grid1D {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.x_min == other.x_min
            && self.x_max == other.x_max
            && self.periodic == other.periodic
    }
}

impl Grid1D {
    /// Periodic grid on `[x_min, x_max)`.
    pub fn new(n: usize, x_min: f64, x_max: f64) -> Result<Arc<Self>> {
        Self::build(n, x_min, x_max, true)
    }

    /// Non-periodic grid; only central differences are available and
    /// one-sided stencils are used at the two ends.
    pub fn new_bounded(n: usize, x_min: f64, x_max: f64) -> Result<Arc<Self>> {
        Self::build(n, x_min, x_max, false)
    }

    fn build(n: usize, x_min: f64, x_max: f64, periodic: bool) -> Result<Arc<Self>> {
        if n < 16 {
            return Err(Error::GridTooSmall(format!("n = {n} < 16")));
        }
        if !(x_min.is_finite() && x_max.is_finite() && x_max > x_min) {
            return Err(Error::InvalidParameter(format!(
                "grid bounds [{x_min}, {x_max}] are not an interval"
            )));
        }
        let length = x_max - x_min;
        let dx = length / n as f64;
        let wavenumbers = (0..n)
            .map(|j| {
                let m = if j <= (n - 1) / 2 { j as f64 } else { j as f64 - n as f64 };
                2.0 * PI * m / length
            })
            .collect();
        let mut planner = FftPlanner::new();
        Ok(Arc::new(Self {
            n,
            x_min,
            x_max,
            dx,
            periodic,
            wavenumbers,
            fft: planner.plan_fft_forward(n),
            ifft: planner.plan_fft_inverse(n),
        }))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    /// Angular wavenumbers in FFT order; the Nyquist entry (even n) is negative.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    /// True when the grid is mirror-symmetric about the origin, so that
    /// index `j` maps to `(n - j) mod n` under `x -> -x`.
    pub fn is_symmetric(&self) -> bool {
        self.periodic && (self.x_min + self.x_max).abs() <= 1e-12 * self.length()
    }

    /// Index of the grid point nearest to `x`, if `x` lies within the domain.
    pub fn nearest_index(&self, x: f64) -> Option<usize> {
        if !(x >= self.x_min && x <= self.x_max) {
            return None;
        }
        let i = ((x - self.x_min) / self.dx).round() as usize;
        Some(if i >= self.n { if self.periodic { 0 } else { self.n - 1 } } else { i })
    }

    /// Unnormalised forward transform in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.fft.process(data);
    }

    /// Normalised inverse transform in place.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.ifft.process(data);
        let s = 1.0 / self.n as f64;
        data.iter_mut().for_each(|z| *z *= s);
    }

    /// Multiplies the spectrum by `(ik)^order`, zeroing the Nyquist mode for
    /// odd orders so real fields stay real.
    fn apply_symbol(&self, spec: &mut [Complex64], order: u8) {
        let nyquist = if self.n % 2 == 0 { Some(self.n / 2) } else { None };
        for (j, z) in spec.iter_mut().enumerate() {
            let k = self.wavenumbers[j];
            *z *= match order {
                1 => {
                    if Some(j) == nyquist {
                        Complex64::new(0.0, 0.0)
                    } else {
                        Complex64::new(0.0, k)
                    }
                }
                2 => Complex64::new(-k * k, 0.0),
                3 => {
                    if Some(j) == nyquist {
                        Complex64::new(0.0, 0.0)
                    } else {
                        Complex64::new(0.0, -k * k * k)
                    }
                }
                _ => Complex64::new(k.powi(4), 0.0),
            };
        }
    }

    /// Spectral derivative of complex samples (orders 1-4).
    pub(crate) fn spectral_derivative(&self, values: &[Complex64], order: u8) -> Vec<Complex64> {
        let mut buf = values.to_vec();
        self.forward(&mut buf);
        self.apply_symbol(&mut buf, order);
        self.inverse(&mut buf);
        buf
    }

    /// Spectral derivative of real samples (orders 1-4).
    pub(crate) fn spectral_derivative_real(&self, values: &[f64], order: u8) -> Vec<f64> {
        let buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.spectral_derivative(&buf, order).into_iter().map(|z| z.re).collect()
    }

    /// Trigonometric interpolation of periodic samples at an arbitrary point.
    pub(crate) fn interpolate(&self, values: &[Complex64], x: f64) -> Complex64 {
        let mut spec = values.to_vec();
        self.forward(&mut spec);
        let nyquist = if self.n % 2 == 0 { Some(self.n / 2) } else { None };
        let s = x - self.x_min;
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, c) in spec.iter().enumerate() {
            let k = self.wavenumbers[j];
            let w = if Some(j) == nyquist {
                Complex64::new((k * s).cos(), 0.0)
            } else {
                Complex64::from_polar(1.0, k * s)
            };
            acc += c * w;
        }
        acc / self.n as f64
    }

    /// Translation `f(x) -> f(x - shift)` by the Fourier shift theorem.
    pub(crate) fn translate(&self, values: &[Complex64], shift: f64) -> Vec<Complex64> {
        let mut buf = values.to_vec();
        self.forward(&mut buf);
        let nyquist = if self.n % 2 == 0 { Some(self.n / 2) } else { None };
        for (j, z) in buf.iter_mut().enumerate() {
            let k = self.wavenumbers[j];
            *z *= if Some(j) == nyquist {
                Complex64::new((k * shift).cos(), 0.0)
            } else {
                Complex64::from_polar(1.0, -k * shift)
            };
        }
        self.inverse(&mut buf);
        buf
    }

    fn central_difference<T>(&self, f: &[T], order: u8) -> Vec<T>
    where
        T: Copy
            + std::ops::Add<Output = T>
            + std::ops::Sub<Output = T>
            + std::ops::Mul<f64, Output = T>,
    {
        let n = self.n;
        let h = self.dx;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let v = if self.periodic || (i > 0 && i + 1 < n) {
                let l = f[(i + n - 1) % n];
                let c = f[i];
                let r = f[(i + 1) % n];
                match order {
                    1 => (r - l) * (0.5 / h),
                    _ => (r + l - c * 2.0) * (1.0 / (h * h)),
                }
            } else if i == 0 {
                match order {
                    1 => (f[1] * 4.0 - f[0] * 3.0 - f[2]) * (0.5 / h),
                    _ => (f[0] * 2.0 - f[1] * 5.0 + f[2] * 4.0 - f[3]) * (1.0 / (h * h)),
                }
            } else {
                match order {
                    1 => (f[n - 1] * 3.0 - f[n - 2] * 4.0 + f[n - 3]) * (0.5 / h),
                    _ => {
                        (f[n - 1] * 2.0 - f[n - 2] * 5.0 + f[n - 3] * 4.0 - f[n - 4])
                            * (1.0 / (h * h))
                    }
                }
            };
            out.push(v);
        }
        out
    }
}

fn check_finite<I: Iterator<Item = bool>>(flags: I) -> Result<()> {
    for (index, ok) in flags.enumerate() {
        if !ok {
            return Err(Error::NonFinite { index });
        }
    }
    Ok(())
}

fn check_order(order: u8) -> Result<()> {
    if order == 1 || order == 2 {
        Ok(())
    } else {
        Err(Error::DerivativeOrder(order))
    }
}

fn same_grid(a: &Arc<Grid1D>, b: &Arc<Grid1D>) -> Result<()> {
    if Arc::ptr_eq(a, b) || **a == **b {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// Real samples on a grid.
#[derive(Clone, Debug)]
pub struct RealField {
    grid: Arc<Grid1D>,
    values: Vec<f64>,
}

impl RealField {
    pub fn new(grid: Arc<Grid1D>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::InvalidParameter(format!(
                "field has {} samples, grid has {}",
                values.len(),
                grid.n()
            )));
        }
        check_finite(values.iter().map(|v| v.is_finite()))?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<Grid1D>) -> Self {
        let n = grid.n();
        Self { grid, values: vec![0.0; n] }
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: Arc<Grid1D>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..grid.n()).map(|i| f(grid.x(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<Grid1D> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn derivative(&self, order: u8, method: Method) -> Result<Self> {
        check_order(order)?;
        let values = match method {
            Method::Spectral => {
                if !self.grid.is_periodic() {
                    return Err(Error::NotPeriodic);
                }
                self.grid.spectral_derivative_real(&self.values, order)
            }
            Method::CentralDifference => self.grid.central_difference(&self.values, order),
        };
        Ok(Self { grid: self.grid.clone(), values })
    }

    /// Rectangle-rule integral.
    pub fn integrate(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.dx()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        same_grid(&self.grid, &other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self::new(self.grid.clone(), values)
    }

    pub fn to_complex(&self) -> ComplexField {
        ComplexField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    /// `f(x) -> f(x - shift)` by Fourier interpolation.
    pub fn translated(&self, shift: f64) -> Result<Self> {
        if !self.grid.is_periodic() {
            return Err(Error::NotPeriodic);
        }
        let buf: Vec<Complex64> = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let values = self.grid.translate(&buf, shift).into_iter().map(|z| z.re).collect();
        Self::new(self.grid.clone(), values)
    }
}

/// Complex samples on a grid.
#[derive(Clone, Debug)]
pub struct ComplexField {
    grid: Arc<Grid1D>,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: Arc<Grid1D>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::InvalidParameter(format!(
                "field has {} samples, grid has {}",
                values.len(),
                grid.n()
            )));
        }
        check_finite(values.iter().map(|v| v.re.is_finite() && v.im.is_finite()))?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<Grid1D>) -> Self {
        let n = grid.n();
        Self { grid, values: vec![Complex64::new(0.0, 0.0); n] }
    }

    pub fn from_fn(grid: Arc<Grid1D>, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        let values = (0..grid.n()).map(|i| f(grid.x(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<Grid1D> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn derivative(&self, order: u8, method: Method) -> Result<Self> {
        check_order(order)?;
        check_finite(self.values.iter().map(|v| v.re.is_finite() && v.im.is_finite()))?;
        let values = match method {
            Method::Spectral => {
                if !self.grid.is_periodic() {
                    return Err(Error::NotPeriodic);
                }
                self.grid.spectral_derivative(&self.values, order)
            }
            Method::CentralDifference => self.grid.central_difference(&self.values, order),
        };
        Ok(Self { grid: self.grid.clone(), values })
    }

    /// `∫ conj(a) b dx`.
    pub fn inner_product(&self, other: &Self) -> Result<Complex64> {
        same_grid(&self.grid, &other.grid)?;
        let s: Complex64 = self.values.iter().zip(&other.values).map(|(a, b)| a.conj() * b).sum();
        Ok(s * self.grid.dx())
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.dx()
    }

    /// `‖f‖²` evaluated from the discrete spectrum (Parseval).
    pub fn spectral_norm_sq(&self) -> Result<f64> {
        if !self.grid.is_periodic() {
            return Err(Error::NotPeriodic);
        }
        let mut buf = self.values.clone();
        self.grid.forward(&mut buf);
        let n = self.grid.n() as f64;
        Ok(buf.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.dx() / n)
    }

    pub fn modulus(&self) -> RealField {
        RealField { grid: self.grid.clone(), values: self.values.iter().map(|z| z.norm()).collect() }
    }

    pub fn density(&self) -> RealField {
        RealField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|z| z.norm_sqr()).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|&z| z * c).collect() }
    }

    pub fn conj(&self) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|z| z.conj()).collect() }
    }

    pub fn real_part(&self) -> RealField {
        RealField { grid: self.grid.clone(), values: self.values.iter().map(|z| z.re).collect() }
    }

    pub fn imag_part(&self) -> RealField {
        RealField { grid: self.grid.clone(), values: self.values.iter().map(|z| z.im).collect() }
    }

    /// Value at an arbitrary point by trigonometric interpolation.
    pub fn interpolate(&self, x: f64) -> Result<Complex64> {
        if !(x >= self.grid.x_min() && x < self.grid.x_max()) {
            return Err(Error::ProbeOutside { x });
        }
        if !self.grid.is_periodic() {
            return Err(Error::NotPeriodic);
        }
        Ok(self.grid.interpolate(&self.values, x))
    }

    /// `f(x) -> f(x - shift)` by Fourier interpolation.
    pub fn translated(&self, shift: f64) -> Result<Self> {
        if !self.grid.is_periodic() {
            return Err(Error::NotPeriodic);
        }
        Self::new(self.grid.clone(), self.grid.translate(&self.values, shift))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, half: f64) -> Arc<Grid1D> {
        Grid1D::new(n, -half, half).unwrap()
    }

    #[test]
    fn wavenumber_layout() {
        let g = grid(16, PI);
        let k = g.wavenumbers();
        assert_eq!(k[0], 0.0);
        assert!((k[1] - 1.0).abs() < 1e-15);
        assert!((k[8] + 8.0).abs() < 1e-15);
        assert!((k[15] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_small_and_degenerate_grids() {
        assert!(matches!(Grid1D::new(8, 0.0, 1.0), Err(Error::GridTooSmall(_))));
        assert!(Grid1D::new(32, 1.0, 1.0).is_err());
    }

    #[test]
    fn spectral_first_derivative_of_sine() {
        let g = grid(64, PI);
        let k = 3.0;
        let f = RealField::from_fn(g.clone(), |x| (k * x).sin()).unwrap();
        let d = f.derivative(1, Method::Spectral).unwrap();
        for (i, v) in d.values().iter().enumerate() {
            assert!((v - k * (k * g.x(i)).cos()).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_has_zero_derivative() {
        let g = grid(32, 5.0);
        let f = RealField::from_fn(g, |_| 2.5).unwrap();
        for m in [Method::Spectral, Method::CentralDifference] {
            assert!(f.derivative(1, m).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_second_derivative() {
        let g = grid(512, 20.0);
        let f = RealField::from_fn(g.clone(), |x| (-x * x / 2.0).exp()).unwrap();
        let d = f.derivative(2, Method::Spectral).unwrap();
        for (i, v) in d.values().iter().enumerate() {
            let x = g.x(i);
            assert!((v - (x * x - 1.0) * (-x * x / 2.0).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_order_and_non_finite() {
        let g = grid(32, 5.0);
        let f = RealField::zeros(g.clone());
        assert!(matches!(f.derivative(3, Method::Spectral), Err(Error::DerivativeOrder(3))));
        let mut v = vec![0.0; 32];
        v[7] = f64::NAN;
        assert!(matches!(RealField::new(g, v), Err(Error::NonFinite { index: 7 })));
    }

    #[test]
    fn spectral_needs_periodic_grid() {
        let g = Grid1D::new_bounded(32, 0.0, 1.0).unwrap();
        let f = RealField::from_fn(g, |x| x).unwrap();
        assert!(matches!(f.derivative(1, Method::Spectral), Err(Error::NotPeriodic)));
        let d = f.derivative(1, Method::CentralDifference).unwrap();
        assert!(d.values().iter().all(|v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn cross_grid_inner_product_rejected() {
        let a = ComplexField::zeros(grid(32, 5.0));
        let b = ComplexField::zeros(grid(32, 6.0));
        assert!(matches!(a.inner_product(&b), Err(Error::GridMismatch)));
    }

    #[test]
    fn equal_grids_built_separately_are_compatible() {
        let a = ComplexField::zeros(grid(32, 5.0));
        let b = ComplexField::zeros(grid(32, 5.0));
        assert!(a.inner_product(&b).is_ok());
    }

    #[test]
    fn translation_and_interpolation_are_consistent() {
        let g = grid(512, 40.0);
        let f = ComplexField::from_fn(g.clone(), |x| Complex64::new(1.0 / x.cosh(), 0.0)).unwrap();
        let t = f.translated(0.37).unwrap();
        for i in (0..512).step_by(17) {
            let x = g.x(i);
            assert!((t.values()[i].re - 1.0 / (x - 0.37).cosh()).abs() < 1e-10);
        }
        let v = f.interpolate(0.123).unwrap();
        assert!((v.re - 1.0 / 0.123f64.cosh()).abs() < 1e-10);
        assert!(f.interpolate(45.0).is_err());
    }

    #[test]
    fn symmetric_grid_detection() {
        assert!(grid(32, 4.0).is_symmetric());
        assert!(!Grid1D::new(32, -4.0, 5.0).unwrap().is_symmetric());
    }
}

use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use soliton_well::grid::{ComplexField, Grid1D, Method, RealField};
use soliton_well::Error;

fn sech(x: f64) -> f64 {
    1.0 / x.cosh()
}

/// Composite Simpson rule, used as an independent quadrature oracle.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

#[test]
fn sine_derivative_is_exact() {
    let g = Grid1D::new(64, 0.0, 2.0 * PI).unwrap();
    let k = 3.0;
    let f = RealField::from_fn(g.clone(), |x| (k * x).sin()).unwrap();
    let d = f.derivative(1, Method::Spectral).unwrap();
    let err = (0..g.n()).map(|i| (d.values()[i] - k * (k * g.x(i)).cos()).abs()).fold(0.0, f64::max);
    assert!(err < 1e-10, "err = {err:e}");
}

#[test]
fn constant_derivative_vanishes() {
    let g = Grid1D::new(128, -5.0, 5.0).unwrap();
    let f = RealField::from_fn(g, |_| 2.5).unwrap();
    for m in [Method::Spectral, Method::CentralDifference] {
        assert!(f.derivative(1, m).unwrap().max_abs() < 1e-12);
    }
}

#[test]
fn gaussian_second_derivative() {
    let g = Grid1D::new(512, -20.0, 20.0).unwrap();
    let f = RealField::from_fn(g.clone(), |x| (-0.5 * x * x).exp()).unwrap();
    let d = f.derivative(2, Method::Spectral).unwrap();
    let err = (0..g.n())
        .map(|i| {
            let x = g.x(i);
            (d.values()[i] - (x * x - 1.0) * (-0.5 * x * x).exp()).abs()
        })
        .fold(0.0, f64::max);
    assert!(err < 1e-8, "err = {err:e}");
}

#[test]
fn sech_squared_integrates_to_two() {
    let g = Grid1D::new(2048, -20.0, 20.0).unwrap();
    let f = RealField::from_fn(g, |x| sech(x).powi(2)).unwrap();
    // Antiderivative tanh.
    let exact = 20f64.tanh() - (-20f64).tanh();
    assert!((f.integrate() - exact).abs() < 1e-10);
    assert!((f.integrate() - 2.0).abs() < 1e-10);
}

#[test]
fn zero_field_integrates_to_zero() {
    let g = Grid1D::new(64, -1.0, 1.0).unwrap();
    assert_eq!(RealField::zeros(g).integrate(), 0.0);
}

#[test]
fn second_moment_of_sech() {
    let g = Grid1D::new(4096, -40.0, 40.0).unwrap();
    let f = RealField::from_fn(g, |x| x * x * sech(x)).unwrap();
    let oracle = simpson(|x| x * x * sech(x), -40.0, 40.0, 40_960);
    // Full line: π³/4; π³/8 is the half-line value.
    assert!((oracle - PI.powi(3) / 4.0).abs() < 1e-9);
    assert!((f.integrate() - oracle).abs() < 1e-6);
}

#[test]
fn inner_product_examples() {
    let g = Grid1D::new(2048, -20.0, 20.0).unwrap();
    let f = ComplexField::from_fn(g.clone(), |x| Complex64::new(sech(x), 0.0)).unwrap();
    let odd = ComplexField::from_fn(g.clone(), |x| Complex64::new(x * sech(x), 0.3 * x.tanh() * sech(x))).unwrap();
    let ff = f.inner_product(&f).unwrap();
    assert!((ff.re - 2.0).abs() < 1e-10 && ff.im.abs() < 1e-14);
    assert!(f.inner_product(&odd).unwrap().norm() < 1e-12);

    let i = Complex64::new(0.0, 1.0);
    let g2 = ComplexField::from_fn(g, |x| Complex64::new((-x * x).exp(), 0.5 * x * (-x * x).exp())).unwrap();
    let lhs = f.scale(i).inner_product(&g2).unwrap();
    let rhs = -i * f.inner_product(&g2).unwrap();
    assert!((lhs - rhs).norm() < 1e-14);
}

#[test]
fn cross_grid_operations_fail() {
    let a = Grid1D::new(64, -1.0, 1.0).unwrap();
    let b = Grid1D::new(128, -1.0, 1.0).unwrap();
    let fa = ComplexField::zeros(a);
    let fb = ComplexField::zeros(b);
    assert!(matches!(fa.inner_product(&fb), Err(Error::GridMismatch)));
}

#[test]
fn central_difference_converges_at_second_order() {
    let err = |n: usize| {
        let g = Grid1D::new(n, -15.0, 15.0).unwrap();
        let f = RealField::from_fn(g.clone(), |x| (-0.5 * x * x).exp() * (2.0 * x).cos()).unwrap();
        let fd = f.derivative(1, Method::CentralDifference).unwrap();
        let sp = f.derivative(1, Method::Spectral).unwrap();
        fd.values().iter().zip(sp.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let order = (err(256) / err(512)).log2();
    assert!(order >= 1.9, "order = {order}");
}

#[test]
fn bounded_grid_has_no_spectral_path() {
    let g = Grid1D::new_bounded(64, 0.0, 1.0).unwrap();
    let f = RealField::from_fn(g, |x| x * x).unwrap();
    assert!(matches!(f.derivative(1, Method::Spectral), Err(Error::NotPeriodic)));
    let d = f.derivative(1, Method::CentralDifference).unwrap();
    let g = f.grid();
    for i in 1..g.n() - 1 {
        assert!((d.values()[i] - 2.0 * g.x(i)).abs() < 1e-12);
    }
}

fn smooth_field(g: &std::sync::Arc<Grid1D>, c: [f64; 4]) -> ComplexField {
    ComplexField::from_fn(g.clone(), |x| {
        let env = (-(x - c[0]).powi(2) / (1.0 + c[1].abs())).exp();
        Complex64::from_polar(env, c[2] * x + c[3] * x * x)
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn parseval_holds(c0 in -3.0..3.0f64, c1 in 0.0..4.0f64, c2 in -2.0..2.0f64, c3 in -0.2..0.2f64) {
        let g = Grid1D::new(512, -20.0, 20.0).unwrap();
        let f = smooth_field(&g, [c0, c1, c2, c3]);
        let phys = f.norm_sq();
        let spec = f.spectral_norm_sq().unwrap();
        prop_assert!((phys - spec).abs() <= 1e-10 * phys);
    }

    #[test]
    fn integration_is_linear(a in -5.0..5.0f64, b in -5.0..5.0f64, s in 0.5..3.0f64) {
        let g = Grid1D::new(256, -10.0, 10.0).unwrap();
        let f = RealField::from_fn(g.clone(), |x| (-x * x / s).exp()).unwrap();
        let h = RealField::from_fn(g, |x| x.sin() * sech(x)).unwrap();
        let comb = f.zip_with(&h, |u, v| a * u + b * v).unwrap();
        let lhs = comb.integrate();
        let rhs = a * f.integrate() + b * h.integrate();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn translation_round_trip(shift in -2.0..2.0f64) {
        let g = Grid1D::new(512, -30.0, 30.0).unwrap();
        let f = smooth_field(&g, [0.0, 1.0, 0.5, 0.0]);
        let back = f.translated(shift).unwrap().translated(-shift).unwrap();
        let err = f.values().iter().zip(back.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-10);
    }
}

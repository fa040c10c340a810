use proptest::prelude::*;
use soliton_well::grid::Grid1D;
use soliton_well::{PotentialShape, PotentialSpec};

fn raw_well(omega: f64, delta: f64) -> PotentialSpec {
    PotentialSpec {
        shape: PotentialShape::TruncatedWell { omega, delta, continuity_fix: false, cubic: 0.0 },
        offset: 0.0,
    }
}

#[test]
fn harmonic_value_at_two() {
    assert_eq!(PotentialSpec::harmonic(1.0).value_at(2.0), 1.0);
}

#[test]
fn well_is_zero_outside_support() {
    for delta in [0.05, 0.1, 0.5, 0.9] {
        assert_eq!(PotentialSpec::truncated_well(1.0, delta).value_at(3.0), 0.0);
        assert_eq!(PotentialSpec::truncated_well(1.0, delta).value_at(-3.0), 0.0);
    }
}

#[test]
fn raw_well_jumps_at_inner_junction() {
    let v = raw_well(1.0, 0.1);
    let eps = 1e-12;
    let jump = v.value_at(1.0 - eps) - v.value_at(1.0 + eps);
    assert!((jump - 0.25).abs() < 1e-10, "jump = {jump}");
}

#[test]
fn harmonic_shift_gradient_is_constant() {
    let g = Grid1D::new(1024, -10.0, 10.0).unwrap();
    let w = PotentialSpec::harmonic(1.0).shifted_difference(&g, 0.2).unwrap();
    // W = ω²(2xX - X²)/4, so ∂x W = ω²X/2 = 0.1 exactly.
    let dev = (1..g.n())
        .map(|i| ((w.values()[i] - w.values()[i - 1]) / g.dx() - 0.1).abs())
        .fold(0.0, f64::max);
    assert!(dev < 1e-10, "dev = {dev:e}");
}

#[test]
fn zero_shift_gives_zero() {
    let g = Grid1D::new(256, -10.0, 10.0).unwrap();
    for v in [PotentialSpec::harmonic(1.3), PotentialSpec::truncated_well(1.0, 0.1)] {
        assert_eq!(v.shifted_difference(&g, 0.0).unwrap().max_abs(), 0.0);
    }
}

#[test]
fn well_shift_support() {
    let g = Grid1D::new(2048, -10.0, 10.0).unwrap();
    let w = PotentialSpec::truncated_well(1.0, 0.1).shifted_difference(&g, 0.1).unwrap();
    for i in 0..g.n() {
        if g.x(i).abs() > 2.1 + 1e-12 {
            assert_eq!(w.values()[i], 0.0, "x = {}", g.x(i));
        }
    }
    assert!(w.max_abs() > 0.0);
}

#[test]
fn continuity_fixed_well_converges_linearly() {
    let v = PotentialSpec::truncated_well(1.0, 0.1);
    let jump = |n: usize| {
        let g = Grid1D::new(n, -5.0, 5.0).unwrap();
        let f = v.evaluate(&g).unwrap();
        f.values().windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max)
    };
    let (j1, j2, j3) = (jump(512), jump(1024), jump(2048));
    assert!((j1 / j2 - 2.0).abs() < 0.2 && (j2 / j3 - 2.0).abs() < 0.2, "{j1} {j2} {j3}");
}

#[test]
fn harmonic_force_is_half() {
    let f = PotentialSpec::harmonic(1.0).transition_force_coefficients().unwrap();
    assert!(f.alpha0.abs() < 1e-6, "alpha0 = {}", f.alpha0);
    assert!((f.beta0 - 0.5).abs() < 1e-6, "beta0 = {}", f.beta0);
    assert!(!f.flagged);
}

#[test]
fn force_fit_is_independent_of_shift_step() {
    let v = PotentialSpec::harmonic(2.0);
    let a = v.force_fit(2.0, 0.1, 1e-4).unwrap();
    let b = v.force_fit(2.0, 0.1, 1e-3).unwrap();
    assert!((a.beta0 - b.beta0).abs() < 1e-6 && (a.alpha0 - b.alpha0).abs() < 1e-6);
}

/// Independent oracle: `α = V''/ω²` from a plain second difference of `V`,
/// then an ordinary least-squares line over the band.
fn brute_force_alpha(v: &PotentialSpec, omega: f64, delta: f64) -> (f64, f64, f64) {
    let h = 1e-5 / omega;
    let junctions = [1.0 / omega, (1.0 + delta) / omega];
    let pts: Vec<(f64, f64)> = (0..=4000)
        .map(|i| (1.0 - delta) / omega + 2.0 * delta / omega * i as f64 / 4000.0)
        .filter(|x| junctions.iter().all(|j| (x - j).abs() > 2.0 * h))
        .map(|x| (x, (v.value_at(x + h) - 2.0 * v.value_at(x) + v.value_at(x - h)) / (h * h * omega * omega)))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rms = (pts.iter().map(|p| (p.1 - slope * p.0 - icpt).powi(2)).sum::<f64>() / n).sqrt();
    (slope, icpt, rms)
}

#[test]
fn well_force_matches_brute_force_oracle() {
    let v = PotentialSpec::truncated_well(1.0, 0.1);
    let f = v.transition_force_coefficients().unwrap();
    let (a, b, rms) = brute_force_alpha(&v, 1.0, 0.1);
    // A ±1/2 step over a band of half-width δ/ω has slope -3ω/(4δ) and rms 1/4.
    assert!((a + 7.5).abs() < 0.05 && (b - 7.5).abs() < 0.05 && (rms - 0.25).abs() < 0.005);
    assert!((f.alpha0 - a).abs() < 0.05, "{} vs {a}", f.alpha0);
    assert!((f.beta0 - b).abs() < 0.05, "{} vs {b}", f.beta0);
    assert!((f.residual_rms - rms).abs() < 0.01);
    assert!(f.flagged);
    assert!(!f.outgoing_sign);
}

#[test]
fn well_force_golden_values() {
    let f = PotentialSpec::truncated_well(1.0, 0.1).transition_force_coefficients().unwrap();
    assert!((f.alpha0 - -7.4998).abs() < 1e-3, "alpha0 = {}", f.alpha0);
    assert!((f.beta0 - 7.4986).abs() < 1e-3, "beta0 = {}", f.beta0);
    assert!((f.residual_rms - 0.248).abs() < 1e-3, "rms = {}", f.residual_rms);
}

#[test]
fn potential_round_trips_through_toml() {
    let text = "offset = 0.5\n[shape]\nkind = \"truncated_well\"\nomega = 1.0\ndelta = 0.1\n";
    let v: PotentialSpec = toml::from_str(text).unwrap();
    assert_eq!(v.offset, 0.5);
    assert!(matches!(v.shape, PotentialShape::TruncatedWell { continuity_fix: true, .. }));
    let bad = "[shape]\nkind = \"harmonic\"\nomega = 1.0\nomgea = 2.0\n";
    assert!(toml::from_str::<PotentialSpec>(bad).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn potentials_are_even(x in -6.0..6.0f64, omega in 0.5..2.0f64, delta in 0.05..0.9f64) {
        for v in [PotentialSpec::harmonic(omega), PotentialSpec::truncated_well(omega, delta), raw_well(omega, delta)] {
            prop_assert_eq!(v.value_at(x), v.value_at(-x));
        }
    }

    #[test]
    fn shifted_difference_reflection(x in -4.0..4.0f64, shift in -0.5..0.5f64, delta in 0.05..0.5f64) {
        // For even V: W(x; X) = V(x) - V(x - X) = W(-x; -X).
        let v = PotentialSpec::truncated_well(1.0, delta);
        let w = |x: f64, s: f64| v.value_at(x) - v.value_at(x - s);
        prop_assert!((w(x, shift) - w(-x, -shift)).abs() < 1e-14);
    }

    #[test]
    fn fixed_well_is_continuous(omega in 0.5..2.0f64, delta in 0.05..0.9f64) {
        let v = PotentialSpec::truncated_well(omega, delta);
        for j in [1.0 / omega, (1.0 + delta) / omega, 2.0 / omega] {
            let gap = (v.value_at(j * (1.0 + 1e-12)) - v.value_at(j * (1.0 - 1e-12))).abs();
            prop_assert!(gap < 1e-9, "gap {} at {}", gap, j);
        }
    }
}

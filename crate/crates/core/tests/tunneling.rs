use std::sync::OnceLock;

use soliton_well::dynamics::{Absorber, IntegratorConfig};
use soliton_well::grid::Grid1D;
use soliton_well::soliton::{solve_profile, ProfileTarget, SolitonProfile, SolverOptions};
use soliton_well::tunneling::{simulate, Launch, TunnelingExperiment};
use soliton_well::{Error, PotentialSpec};

fn well_profile() -> &'static SolitonProfile {
    static P: OnceLock<SolitonProfile> = OnceLock::new();
    P.get_or_init(|| {
        let g = Grid1D::new(1024, -40.0, 40.0).unwrap();
        solve_profile(&PotentialSpec::truncated_well(1.0, 0.1), -2.0, ProfileTarget::Energy(1.0), &g, &SolverOptions::default())
            .unwrap()
    })
}

fn absorbing(dt: f64) -> IntegratorConfig {
    IntegratorConfig { dt, absorber: Absorber::Mask { onset: 15.0, strength: 5.0 }, record_every: 10 }
}

fn experiment(probes: Vec<f64>) -> TunnelingExperiment {
    TunnelingExperiment {
        profile: well_profile().clone(),
        integrator: absorbing(1e-3),
        launch: Launch::Velocity,
        probes,
        epsilon_sweep: vec![0.1],
        horizon: 0.1,
        transient: 0.5,
    }
}

#[test]
fn launch_modes() {
    assert_eq!(Launch::Velocity.initial(0.1, 2.0), (0.0, 0.2));
    assert_eq!(Launch::Offset.initial(0.1, 2.0), (0.1, 0.0));
    assert_eq!(Launch::default(), Launch::Velocity);
}

#[test]
fn well_formed_experiment_validates() {
    experiment(vec![1.1, 2.0, 4.0]).validate().unwrap();
}

#[test]
fn probe_inside_well_rejected() {
    match experiment(vec![1.05, 2.0]).validate() {
        Err(Error::InsideWell { x, x_edge }) => {
            assert_eq!(x, 1.05);
            assert!((x_edge - 1.1).abs() < 1e-12);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unsorted_or_missing_probes_rejected() {
    assert!(experiment(vec![2.0, 1.5]).validate().is_err());
    assert!(experiment(vec![2.0, 2.0]).validate().is_err());
    assert!(experiment(vec![]).validate().is_err());
}

#[test]
fn probe_in_absorber_rejected() {
    assert!(experiment(vec![1.5, 16.0]).validate().is_err());
}

#[test]
fn non_well_potential_rejected() {
    let mut e = experiment(vec![2.0]);
    e.profile = SolitonProfile::free_sech(Grid1D::new(256, -20.0, 20.0).unwrap(), 1.0, -2.0).unwrap();
    assert!(e.validate().is_err());
}

#[test]
fn bad_sweep_and_horizon_rejected() {
    let mut e = experiment(vec![2.0]);
    e.epsilon_sweep = vec![0.1, -0.05];
    assert!(e.validate().is_err());
    let mut e = experiment(vec![2.0]);
    e.horizon = 0.0;
    assert!(e.validate().is_err());
}

#[test]
fn run_length_scales_inversely_with_epsilon() {
    let e = experiment(vec![2.0]);
    assert!((e.t_end(0.1).unwrap() - 1.0).abs() < 1e-12);
    assert!((e.t_end(0.05).unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn short_simulation_records_probes() {
    let p = well_profile();
    let rec = simulate(p, &absorbing(1e-3), Launch::Velocity, 0.1, &[1.1, 2.0], 1.0).unwrap();
    let n = rec.times.len();
    assert_eq!(n, 101);
    assert!((rec.times[n - 1] - 1.0).abs() < 1e-9);
    assert_eq!(rec.probes.len(), 2);
    for s in &rec.probes {
        assert_eq!(s.rho.len(), n);
        assert_eq!(s.v_detrended.len(), n);
        for k in 0..n {
            assert!(s.rho[k] >= 0.0);
            assert!((s.v_detrended[k] - (s.v[k] - rec.center_velocity[k])).abs() < 1e-15);
        }
    }
    // Launch velocity εω = 0.1.
    assert!((rec.center_velocity[0] - 0.1).abs() < 1e-8, "{}", rec.center_velocity[0]);
    assert!(rec.mass.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    assert!(rec.max_rho >= p.s.max_abs().powi(2) * 0.99);
}

#[test]
fn offset_launch_starts_at_rest() {
    let rec = simulate(well_profile(), &absorbing(1e-3), Launch::Offset, 0.1, &[2.0], 0.1).unwrap();
    assert!(rec.center_velocity[0].abs() < 1e-10);
}

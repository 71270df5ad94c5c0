use mixkinetics::maxwell_stefan::*;
use mixkinetics::mixture::MixtureSpec;
use mixkinetics::Error;
use std::f64::consts::PI;

fn spec() -> MixtureSpec {
    MixtureSpec::new(vec![1.0, 2.0], vec![1.0, 1.0]).unwrap()
}

#[test]
fn invariants_hold_along_a_run() {
    let lx = 2.0 * PI;
    let ms = MSState::sinusoidal(&spec(), lx, 16, &[0.2, -0.2], 1, UBarProfile::SinShear { amplitude: 0.3, mode: 1 }, 0.5).unwrap();
    let mut s = ms;
    for _ in 0..200 {
        s = step_ms(&s, 0.005).unwrap();
        assert!(s.sum_residual() <= 1e-12);
        assert!(s.mean_residual() <= 1e-12);
        assert!(s.orthogonality_residual() <= 1e-12);
        assert!(s.incompressibility_residual() <= 1e-12);
    }
}

// Frozen: nx = 16, ε = 0.5, dt = 0.005, t = 2.
#[test]
fn frozen_decay_without_bulk_flow() {
    let ms = MSState::sinusoidal(&spec(), 2.0 * PI, 16, &[0.2, -0.2], 1, UBarProfile::Zero, 0.5).unwrap();
    let (end, hist) = run_ms(&ms, 0.005, 2.0).unwrap();
    assert!((hist[0].1 - 5.01325654926200071e-1).abs() < 1e-12);
    assert!((end.c_tilde_norm() - 1.84427401779217848e-1).abs() < 1e-10, "{:.17e}", end.c_tilde_norm());
    let (rate, fit) = fit_decay(&hist);
    assert!((rate - 0.5).abs() < 1e-8);
    assert!(fit.r_squared > 0.999999);
}

#[test]
fn step_beyond_stability_bound_is_rejected() {
    let ms = MSState::sinusoidal(&spec(), 2.0 * PI, 32, &[0.2, -0.2], 1, UBarProfile::Zero, 0.5).unwrap();
    let bound = ms.max_stable_dt(1.0);
    assert!(step_ms(&ms, 0.5 * bound).is_ok());
    assert!(matches!(step_ms(&ms, 2.0 * bound), Err(Error::CflViolation { .. })));
}

#[test]
fn negative_density_is_rejected() {
    let r = MSState::sinusoidal(&spec(), 1.0, 8, &[4.0, -4.0], 1, UBarProfile::Zero, 1.0);
    assert!(matches!(r, Err(Error::NonPositiveDensity { .. })), "{r:?}");
}

#[test]
fn velocities_satisfy_compatibility() {
    let s = spec();
    let ms = MSState::sinusoidal(&s, 2.0 * PI, 16, &[0.3, -0.1], 2, UBarProfile::Zero, 0.25).unwrap();
    let rep = check_compatibility(&s, 2.0 * PI, &ms.c_tilde, &ms.u_tilde, &ms.u_bar, 0.25, 1e-10);
    assert!(rep.all_pass(), "{rep:?}");
    let mut bad = ms.c_tilde.clone();
    bad[0][3] += 0.1;
    let rep = check_compatibility(&s, 2.0 * PI, &bad, &ms.u_tilde, &ms.u_bar, 0.25, 1e-10);
    assert!(!rep.sum_zero_ok);
}

#[test]
fn shear_profile_is_divergence_free_and_time_periodic() {
    let p = UBarProfile::PeriodicShear { amplitude: 0.2, mode: 1, omega: 1.0 };
    let u = p.value(0.7, 0.0, 2.0 * PI);
    assert_eq!(u[0], 0.0);
    let w = p.value(0.7, 2.0 * PI, 2.0 * PI);
    assert!((u[1] - w[1]).abs() < 1e-14);
    let h = 1e-6;
    let fd = (p.value(0.7, 1.0 + h, 2.0 * PI)[1] - p.value(0.7, 1.0 - h, 2.0 * PI)[1]) / (2.0 * h);
    assert!((fd - p.time_derivative(0.7, 1.0, 2.0 * PI)[1]).abs() < 1e-8);
}

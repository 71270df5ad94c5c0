use mixkinetics::collision::{CollisionConfig, CollisionOperator};
use mixkinetics::hypo::*;
use mixkinetics::kinetic::{DtSpec, Scheme};
use mixkinetics::linearized::KernelBasis;
use mixkinetics::maxwell_stefan::UBarProfile;
use mixkinetics::mixture::*;
use mixkinetics::numerics::{seeded_rng, InterpOrder};
use mixkinetics::Error;
use std::f64::consts::PI;

fn grid(nx: usize, nv: usize) -> (MixtureSpec, PhaseGrid) {
    let s = MixtureSpec::new(vec![1.0, 2.0], vec![1.0, 1.0]).unwrap();
    let g = PhaseGrid::new(2, nx, 2.0 * PI, nv, PhaseGrid::default_v_max(&s)).unwrap();
    (s, g)
}

fn init() -> InitialData {
    InitialData { amplitude: 0.5, mode: 1, kernel_amplitude: 0.0, degree: 3, seed: 7 }
}

fn shear() -> MsSetup {
    MsSetup { amplitudes: vec![0.2, -0.2], mode: 1, u_bar: UBarProfile::PeriodicShear { amplitude: 0.2, mode: 1, omega: 1.0 }, t0: 0.0 }
}

#[test]
fn hyp_norm_is_a_norm() {
    let (s, g) = grid(8, 8);
    let cfg = HypNormConfig::default().with_epsilon(0.5);
    assert_eq!(hyp_norm(&s, &g, &DistributionField::zeros(2, &g), &cfg).unwrap(), 0.0);
    let mut rng = seeded_rng(3);
    for _ in 0..3 {
        let f = random_test_field(&s, &g, 2, &mut rng);
        let h = random_test_field(&s, &g, 2, &mut rng);
        let nf = hyp_norm(&s, &g, &f, &cfg).unwrap();
        let nh = hyp_norm(&s, &g, &h, &cfg).unwrap();
        let mut f3 = f.clone();
        f3.scale(-3.0);
        assert!((hyp_norm(&s, &g, &f3, &cfg).unwrap() - 3.0 * nf).abs() <= 1e-10 * nf);
        let sum = DistributionField::linear_combination(1.0, &f, 1.0, &h);
        assert!(hyp_norm(&s, &g, &sum, &cfg).unwrap() <= nf + nh + 1e-10 * (nf + nh));
    }
}

#[test]
fn decoupled_form_matches_components() {
    let (s, g) = grid(8, 8);
    let mut rng = seeded_rng(4);
    let f = random_test_field(&s, &g, 1, &mut rng);
    let eps = 0.25;
    let cfg = HypNormConfig { b: 0.0, ..HypNormConfig::default() }.with_epsilon(eps);
    let c = norm_components(&s, &g, &f, 1).unwrap();
    let expect = (c.x.iter().sum::<f64>() + eps * eps * c.v).sqrt();
    assert!((hyp_norm(&s, &g, &f, &cfg).unwrap() - expect).abs() <= 1e-14 * expect);
    assert!((plain_norm(&s, &g, &f, 1, eps).unwrap().powi(2) - (c.x[0] + expect * expect)).abs() <= 1e-12 * expect * expect);
}

#[test]
fn config_validation() {
    let c = HypNormConfig { s: 4, ..HypNormConfig::default() };
    assert!(matches!(c.validate(), Err(Error::DimensionOverflow { .. })));
    let c = HypNormConfig { b: 3.0, ..HypNormConfig::default() };
    assert!(c.validate().is_ok());
    assert!(!c.is_admissible());
    let c = HypNormConfig::default().with_epsilon(0.0);
    assert!(matches!(c.validate(), Err(Error::Config(_))));
}

#[test]
fn norm_ratios_stay_bounded() {
    let (s, g) = grid(8, 8);
    let mut rng = seeded_rng(5);
    let fields: Vec<_> = (0..10).map(|_| random_test_field(&s, &g, 2, &mut rng)).collect();
    let rep = equivalence_ratios(&s, &g, &fields, &HypNormConfig::default(), &[1.0, 0.5, 0.25, 0.125, 0.0625]).unwrap();
    // |εb⟨∂x f, ∂v f⟩| ≤ (b/2)(‖∂x f‖² + ε²‖∂v f‖²) with b = 1/2 brackets the ratio.
    assert!(rep.interval.0 >= 0.5f64.sqrt() - 1e-12 && rep.interval.1 <= 1.25f64.sqrt() + 1e-12, "{:?}", rep.interval);
    for r in &rep.rows {
        assert!(r.min_ratio <= r.max_ratio);
    }
}

#[test]
fn poincare_inequality_on_simple_fields() {
    let (s, g) = grid(16, 8);
    let b = KernelBasis::new(&s, &g);
    let nv = g.n_vel();
    // Sinusoidal kernel mode: π_{T^ε} f = 0 and π_L f = f.
    let phi = b.vectors[0].clone();
    let f = DistributionField::from_fn(2, &g, |i, x, v| (g.x(x)).cos() * phi[i * nv + v]);
    let rep = poincare_check(&s, &g, &b, &f, 0.0, None).unwrap();
    assert!(rep.holds);
    // Tight within a factor 2.
    assert!(rep.pi_l_sq >= 0.5 * 2.0 * rep.torus_constant * rep.grad_sq * (1.0 - 1e-12));
    // x-constant field with nonzero π_{T^ε}: needs the δ term.
    let c = DistributionField::from_fn(2, &g, |i, _, v| phi[i * nv + v]);
    assert!(!poincare_check(&s, &g, &b, &c, 0.1, Some(0.0)).unwrap().holds);
    assert!(poincare_check(&s, &g, &b, &c, 0.1, None).unwrap().holds);
}

#[test]
fn initial_perturbation_is_microscopic_and_oscillating() {
    let (s, g) = grid(8, 8);
    let b = KernelBasis::new(&s, &g);
    let f = initial_perturbation(&s, &g, &b, &init());
    let avg = mixkinetics::linearized::pi_teps(&b, &f);
    assert!(b.inner(&avg, &avg).sqrt() < 1e-12);
    let cfg = HypNormConfig::default().with_epsilon(0.25);
    // Frozen: nv = 8, nx = 8, seed 7.
    let h = hyp_norm(&s, &g, &f, &cfg).unwrap();
    let p = plain_norm(&s, &g, &f, 1, 0.25).unwrap();
    assert!((h - 1.34745978501873487).abs() < 1e-10, "{h:.17e}");
    assert!((p - 1.61277587892434204).abs() < 1e-10, "{p:.17e}");
}

#[test]
fn frozen_short_sweep() {
    let (s, g) = grid(8, 8);
    let op = CollisionOperator::new(&s, &g, CollisionConfig { n_sigma: 4, order: InterpOrder::Cubic }).unwrap();
    let solver = SweepSolver { scheme: Scheme::LieSplitImplicitL, dt: DtSpec::default(), cfl: 0.5, t_end: 0.05, refactor_every: 10, record_every: 1 };
    let tab = stability_sweep(&op, &[0.5, 0.25], &shear(), &init(), &solver, &HypNormConfig::default()).unwrap();
    let expect = [(1.59693534890622546, 1.27737885790787598, 2), (1.34745978501873487, 6.30987209001784510e-1, 4)];
    for (r, (sup, fin, steps)) in tab.rows.iter().zip(expect) {
        assert_eq!(r.steps, steps);
        assert!((r.sup_f - sup).abs() < 1e-9 * sup, "{:.17e}", r.sup_f);
        assert!((r.final_f - fin).abs() < 1e-9 * fin, "{:.17e}", r.final_f);
        assert_eq!(r.sup_metric, r.epsilon * r.sup_f);
        assert_eq!(r.history.len(), steps + 1);
    }
    assert_eq!(tab.delta_b, tab.rows.iter().map(|r| r.sup_f).fold(0.0, f64::max));
}

#[test]
fn uniform_state_has_undefined_scaling() {
    let (s, g) = grid(4, 8);
    let op = CollisionOperator::new(&s, &g, CollisionConfig { n_sigma: 4, order: InterpOrder::Cubic }).unwrap();
    let ms = MsSetup { amplitudes: vec![0.0, 0.0], mode: 1, u_bar: UBarProfile::Zero, t0: 0.0 };
    let rep = source_scaling_probe(&op, &[0.5, 0.25], &ms).unwrap();
    assert!(rep.fluid_fit.iter().chain(&rep.perp_fit).all(|f| f.is_none()));
    for r in &rep.rows {
        assert!(r.fluid.iter().chain(&r.perp).all(|v| *v <= r.floor));
        assert!(r.floor >= SCALING_FLOOR);
    }
}

use mixkinetics::collision::{CollisionConfig, CollisionOperator};
use mixkinetics::kinetic::*;
use mixkinetics::linearized::KernelBasis;
use mixkinetics::maxwell_stefan::{MSState, UBarProfile};
use mixkinetics::mixture::*;
use mixkinetics::numerics::InterpOrder;
use mixkinetics::Error;
use std::f64::consts::PI;

fn setup(nx: usize, nv: usize) -> (MixtureSpec, PhaseGrid, CollisionOperator) {
    let s = MixtureSpec::new(vec![1.0, 2.0], vec![1.0, 1.0]).unwrap();
    let g = PhaseGrid::new(2, nx, 2.0 * PI, nv, PhaseGrid::default_v_max(&s)).unwrap();
    let op = CollisionOperator::new(&s, &g, CollisionConfig { n_sigma: 4, order: InterpOrder::Cubic }).unwrap();
    (s, g, op)
}

fn config(eps: f64, t_end: f64, scheme: Scheme, formulation: Formulation) -> SolverConfig {
    SolverConfig { epsilon: eps, dt: DtSpec::default(), t_end, scheme, cfl: 0.5, formulation, refactor_every: 10, record_every: 1 }
}

#[test]
fn transport_is_an_exact_shift() {
    let (_, g, _) = setup(16, 8);
    let f = DistributionField::from_fn(1, &g, |_, x, _| (g.x(x)).sin());
    let tau = 0.37;
    let out = transport_apply(&g, &f, tau);
    for x in 0..16 {
        for iv in [0, 13, 40] {
            let vx = g.velocity(iv)[0];
            assert!((out.get(0, x, iv) - (g.x(x) - vx * tau).sin()).abs() < 1e-12);
        }
    }
}

#[test]
fn full_form_conserves_mass_momentum_energy() {
    let (s, g, op) = setup(4, 10);
    let mac = MacroField {
        c: vec![(0..4).map(|x| 1.0 + 0.1 * (x as f64).cos()).collect(), vec![0.9; 4]],
        u: vec![vec![[0.2, 0.0, 0.0]; 4], vec![[-0.1, 0.1, 0.0]; 4]],
        theta: 1.0,
        split: None,
    };
    let f0 = local_maxwellian(&s, &g, &mac, 1.0).unwrap();
    let solver = KineticSolver::new(op, config(1.0, 0.2, Scheme::ExplicitRk4, Formulation::FullF)).unwrap();
    let total = |f: &DistributionField| {
        let m = moments(&s, &g, f);
        let mass: Vec<f64> = (0..2).map(|i| m.density[i].iter().sum::<f64>()).collect();
        let mom: f64 = m.total_momentum.iter().map(|p| p[0] + p[1]).sum();
        let en: f64 = m.total_energy.iter().sum();
        (mass, mom, en)
    };
    let (m0, p0, e0) = total(&f0);
    let f1 = solver.run_full(&f0, &|_| vec![[0.0; 3]; 4], &mut |_| Ok(())).unwrap();
    let (m1, p1, e1) = total(&f1);
    for i in 0..2 {
        assert!((m1[i] - m0[i]).abs() <= 1e-12 * m0[i]);
    }
    assert!((p1 - p0).abs() <= 1e-10);
    assert!((e1 - e0).abs() <= 1e-10 * e0);
}

#[test]
fn zero_perturbation_returns_the_source() {
    let (s, g, op) = setup(8, 8);
    let basis = KernelBasis::new(&s, &g);
    let ms = MSState::sinusoidal(&s, g.lx(), 8, &[0.2, -0.2], 1, UBarProfile::SinShear { amplitude: 0.2, mode: 1 }, 0.5).unwrap();
    let r = rhs_perturbed(&op, &DistributionField::zeros(2, &g), &ms).unwrap();
    let src = source_term(&op, &basis, &ms).unwrap();
    let scale = src.values.max_abs();
    let diff = DistributionField::linear_combination(1.0, &r, -1.0, &src.values).max_abs();
    assert!(diff <= 1e-13 * scale);
}

#[test]
fn quiescent_state_stays_at_global_equilibrium() {
    // Coarser lattices leave spurious positive tail modes in the collocation L^ε.
    let (s, g, op) = setup(2, 20);
    let ms = MSState::quiescent(&s, g.lx(), 2, UBarProfile::Zero, 0.25).unwrap();
    let mut solver = KineticSolver::new(op, config(0.25, 0.05, Scheme::LieSplitImplicitL, Formulation::PerturbedF)).unwrap();
    let (f, _) = solver.run_perturbed(&DistributionField::zeros(2, &g), &ms, &mut |_| Ok(())).unwrap();
    assert!(f.max_abs() < 1e-9, "{}", f.max_abs());
}

#[test]
fn full_and_perturbed_forms_agree() {
    // The two forms differentiate M in x differently; at nx = 16 both are resolved.
    let (s, g, op) = setup(16, 8);
    let eps = 0.5;
    let ms = MSState::sinusoidal(&s, g.lx(), 16, &[0.1, -0.1], 1, UBarProfile::Zero, eps).unwrap();
    let mut cfg = config(eps, 0.01, Scheme::ExplicitRk4, Formulation::PerturbedF);
    cfg.dt = DtSpec::Fixed(0.001);
    let mut pert = KineticSolver::new(op.clone(), cfg.clone()).unwrap();
    let f0 = DistributionField::zeros(2, &g);
    let (f, ms1) = pert.run_perturbed(&f0, &ms, &mut |_| Ok(())).unwrap();
    cfg.formulation = Formulation::FullF;
    let full = KineticSolver::new(op, cfg).unwrap();
    let m0 = maxwellian_data(&s, &g, &ms).unwrap().m;
    let big = full.run_full(&m0, &|_| vec![[0.0; 3]; 16], &mut |_| Ok(())).unwrap();
    let m1 = maxwellian_data(&s, &g, &ms1).unwrap().m;
    let rebuilt = DistributionField::linear_combination(1.0, &m1, eps, &f);
    let d = DistributionField::linear_combination(1.0, &big, -1.0, &rebuilt).max_abs();
    assert!(d <= 1e-8, "{d:e}");
}

#[test]
fn configuration_errors() {
    let (_, _, op) = setup(4, 8);
    let bad = config(0.5, 1.0, Scheme::LieSplitImplicitL, Formulation::FullF);
    assert!(matches!(KineticSolver::new(op.clone(), bad), Err(Error::Config(_))));
    let mut c = config(1.5, 1.0, Scheme::ExplicitRk4, Formulation::FullF);
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    c.epsilon = 0.5;
    c.dt = DtSpec::Keyword("fast".into());
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let mut c = config(0.5, 1.0, Scheme::ExplicitRk4, Formulation::FullF);
    c.dt = DtSpec::Fixed(10.0);
    let s = KineticSolver::new(op, c).unwrap();
    let f0 = global_maxwellian(s.spec(), s.grid());
    assert!(matches!(s.run_full(&f0, &|_| vec![[0.0; 3]; 4], &mut |_| Ok(())), Err(Error::CflViolation { .. })));
}

#[test]
fn step_plan_covers_the_interval() {
    assert_eq!(step_plan(1.0, 0.3), (4, 0.25));
    assert_eq!(step_plan(0.0, 0.3), (0, 0.0));
    assert_eq!(step_plan(1.0, 0.5).0, 2);
}

#[test]
fn counterstream_start_matches_equilibrium_moments() {
    let s = MixtureSpec::new(vec![1.0, 2.0], vec![1.0, 1.0]).unwrap();
    let g = PhaseGrid::new(2, 1, 1.0, 32, 8.0).unwrap();
    let f = counterstream_start(&s, &g, 0.5).unwrap();
    let mu = global_maxwellian(&s, &g);
    let (a, b) = (moments(&s, &g, &f), moments(&s, &g, &mu));
    assert!((a.total_energy[0] - b.total_energy[0]).abs() < 1e-9);
    assert!((a.density[1][0] - b.density[1][0]).abs() < 1e-9);
    assert!(matches!(counterstream_start(&s, &g, 1.5), Err(Error::Config(_))));
}

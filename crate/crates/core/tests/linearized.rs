use mixkinetics::collision::{CollisionConfig, CollisionOperator};
use mixkinetics::linearized::carleman::*;
use mixkinetics::linearized::*;
use mixkinetics::mixture::*;
use mixkinetics::numerics::{seeded_rng, InterpOrder};
use mixkinetics::Error;

fn setup(nv: usize, v_max: Option<f64>) -> (MixtureSpec, PhaseGrid, CollisionOperator, KernelBasis) {
    let s = MixtureSpec::new(vec![1.0, 2.0], vec![1.0, 1.0]).unwrap();
    let g = PhaseGrid::new(2, 1, 1.0, nv, v_max.unwrap_or_else(|| PhaseGrid::default_v_max(&s))).unwrap();
    let op = CollisionOperator::new(&s, &g, CollisionConfig { n_sigma: 8, order: InterpOrder::Cubic }).unwrap();
    let b = KernelBasis::new(&s, &g);
    (s, g, op, b)
}

#[test]
fn projection_fixes_basis_and_is_idempotent() {
    let (s, g, _, b) = setup(12, None);
    assert_eq!(b.dim(), 5);
    for phi in &b.vectors {
        let p = b.project(phi);
        let err = p.iter().zip(phi).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8);
    }
    let mut rng = seeded_rng(1);
    let f = random_smooth_point(&s, &g, 3, &mut rng);
    let h = random_smooth_point(&s, &g, 3, &mut rng);
    let pf = b.project(&f);
    let ppf = b.project(&pf);
    let n = b.inner(&f, &f).sqrt();
    let d: Vec<f64> = ppf.iter().zip(&pf).map(|(a, c)| a - c).collect();
    assert!(b.inner(&d, &d).sqrt() <= 1e-10 * n);
    let sa = b.inner(&pf, &h) - b.inner(&f, &b.project(&h));
    assert!(sa.abs() <= 1e-10 * n * b.inner(&h, &h).sqrt());
}

#[test]
fn pi_teps_is_spatial_average_of_pi_l() {
    let s = MixtureSpec::new(vec![1.0, 2.0], vec![1.0, 1.0]).unwrap();
    let g = PhaseGrid::new(2, 4, 2.0, 10, 6.0).unwrap();
    let b = KernelBasis::new(&s, &g);
    let f = DistributionField::from_fn(2, &g, |i, x, v| ((i * 3 + x * 5 + v) % 11) as f64 * 1e-3);
    let avg = pi_teps(&b, &f);
    let pf = pi_l(&b, &f);
    for (k, a) in avg.iter().enumerate() {
        let mean = (0..4).map(|x| pf.point(x)[k]).sum::<f64>() / 4.0;
        assert!((a - mean).abs() < 1e-14);
    }
}

#[test]
fn assembled_l_matches_apply_and_has_five_dim_kernel() {
    let (s, g, op, b) = setup(12, None);
    let l = assemble_l(&op, DEFAULT_DENSE_LIMIT).unwrap();
    assert!(l.asymmetry <= 1e-8);
    let mut rng = seeded_rng(2);
    let f = random_smooth_point(&s, &g, 3, &mut rng);
    let direct = l_apply_galerkin(&op, &f);
    let via = l.apply(&f);
    let scale = direct.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(direct.iter().zip(&via).all(|(a, c)| (a - c).abs() <= 1e-12 * scale));
    let rep = spectral_report(&l, &b, 8).unwrap();
    assert_eq!(rep.kernel_dim, 5);
    assert!(rep.max_principal_angle <= 1e-4);
    // Frozen at nv = 12, n_sigma = 8.
    assert!((rep.lambda_gap - 1.40101951383573842e-1).abs() < 1e-8, "{:.17e}", rep.lambda_gap);
}

#[test]
fn gap_scales_with_collision_strength() {
    let s = MixtureSpec::new(vec![1.0, 2.0], vec![1.0, 1.0]).unwrap();
    let g = PhaseGrid::new(2, 1, 1.0, 10, PhaseGrid::default_v_max(&s)).unwrap();
    let cfg = CollisionConfig { n_sigma: 8, order: InterpOrder::Cubic };
    let b = KernelBasis::new(&s, &g);
    let gap = |spec: &MixtureSpec| {
        let op = CollisionOperator::new(spec, &g, cfg).unwrap();
        spectral_report(&assemble_l(&op, DEFAULT_DENSE_LIMIT).unwrap(), &b, 6).unwrap().lambda_gap
    };
    let g1 = gap(&s);
    let s3 = s.clone().with_phi(vec![vec![3.0; 2]; 2]).unwrap();
    let g3 = gap(&s3);
    assert!((g3 / g1 - 3.0).abs() < 1e-8 * 3.0);
}

#[test]
fn dense_limit_is_enforced() {
    let (_, _, op, _) = setup(12, None);
    assert!(matches!(assemble_l(&op, 100), Err(Error::DimensionOverflow { .. })));
}

#[test]
fn l_eps_output_is_orthogonal_to_kernel() {
    let (s, g, op, b) = setup(12, None);
    let shift = [0.1, -0.05, 0.0];
    let base = BaseMaxwellian { c: vec![1.1, 0.9], drift: vec![[0.1, 0.0, 0.0], [0.1, -0.1, 0.0]] };
    let m = base.stacked(&s, &g);
    let mut rng = seeded_rng(4);
    for _ in 0..3 {
        let f = random_smooth_point(&s, &g, 3, &mut rng);
        let l = l_eps_apply(&op, &m, &f, &shift);
        let p = b.project(&l);
        assert!(b.inner(&p, &p).sqrt() <= 1e-9 * b.inner(&l, &l).sqrt());
    }
}

#[test]
fn l_eps_at_global_equilibrium_has_small_coercivity_defect() {
    let (s, g, op, b) = setup(12, None);
    let mu: Vec<f64> = op.mu().iter().flatten().cloned().collect();
    let le = assemble_l_eps(&op, &mu, &[0.0; 3], DEFAULT_DENSE_LIMIT).unwrap();
    let probe = coercivity_probe(&le, &b, &s, &g, 0.0, 4, 3);
    assert!(probe.defect <= 1e-6, "{}", probe.defect);
}

#[test]
fn carleman_table_is_linear_and_rejects_foreign_grids() {
    let (s, g, op, _) = setup(8, None);
    let base = BaseMaxwellian { c: vec![1.1, 0.9], drift: vec![[0.1, 0.05, 0.0]; 2] };
    let shift = [0.1, 0.05, 0.0];
    let tab = build_table(&op, &base, &shift, &CarlemanConfig::default()).unwrap();
    assert!(tab.all_finite() && tab.kappa3_nonnegative());
    assert_eq!(tab.pairs.len(), 2);
    let mut rng = seeded_rng(6);
    let f = random_smooth_point(&s, &g, 2, &mut rng);
    let h = random_smooth_point(&s, &g, 2, &mut rng);
    let comb: Vec<f64> = f.iter().zip(&h).map(|(a, c)| 1.5 * a - 2.0 * c).collect();
    let (kf, kh, kc) = (kernel_apply(&tab, &g, &f).unwrap(), kernel_apply(&tab, &g, &h).unwrap(), kernel_apply(&tab, &g, &comb).unwrap());
    let scale = kc.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for n in 0..kc.len() {
        assert!((kc[n] - 1.5 * kf[n] + 2.0 * kh[n]).abs() <= 1e-12 * scale);
    }
    let other = PhaseGrid::new(2, 1, 1.0, 10, 5.0).unwrap();
    assert_eq!(kernel_apply(&tab, &other, &f).unwrap_err(), Error::TableGridMismatch);
}

#[test]
fn carleman_rejects_equal_masses() {
    let s = MixtureSpec::new(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
    let base = BaseMaxwellian::global(&s);
    let r = carleman_kappa1(&s, 2, 0, 1, &[0.5, 0.0, 0.0], &[-0.5, 0.2, 0.0], &base);
    assert_eq!(r.unwrap_err(), Error::EqualMassUnsupported(0, 1));
}

#[test]
fn reflection_map_is_an_involution() {
    let n = [0.6, 0.8, 0.0];
    let x = [0.3, -1.2, 0.0];
    let y = reflection_map(&n, &reflection_map(&n, &x));
    assert!((0..2).all(|a| (y[a] - x[a]).abs() < 1e-14));
}

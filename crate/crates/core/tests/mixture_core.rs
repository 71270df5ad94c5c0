use mixkinetics::mixture::*;
use mixkinetics::Error;

fn spec() -> MixtureSpec {
    MixtureSpec::new(vec![1.0, 2.0], vec![1.0, 0.8]).unwrap()
}

#[test]
fn global_maxwellian_moments() {
    let s = spec();
    let g = PhaseGrid::new(2, 3, 1.0, 24, PhaseGrid::default_v_max(&s)).unwrap();
    let mu = global_maxwellian(&s, &g);
    let m = moments(&s, &g, &mu);
    for x in 0..3 {
        for i in 0..2 {
            assert!((m.density[i][x] - s.c_inf[i]).abs() < 1e-9, "density {}", m.density[i][x]);
            assert!(norm2(&m.momentum[i][x]).sqrt() < 1e-12);
        }
        assert!((m.temperature[x] - 1.0).abs() < 1e-8);
    }
}

#[test]
fn local_maxwellian_carries_fluid_data() {
    let s = spec();
    let g = PhaseGrid::new(2, 2, 1.0, 24, PhaseGrid::default_v_max(&s)).unwrap();
    let eps = 0.5;
    let u = [[0.2, -0.1, 0.0], [-0.1, 0.3, 0.0]];
    let mac = MacroField::uniform(&[1.2, 0.7], &u, 2);
    let f = local_maxwellian(&s, &g, &mac, eps).unwrap();
    let m = moments(&s, &g, &f);
    for i in 0..2 {
        assert!((m.density[i][1] - [1.2, 0.7][i]).abs() < 1e-9);
        for a in 0..2 {
            let expect = [1.2, 0.7][i] * eps * u[i][a];
            assert!((m.momentum[i][0][a] - expect).abs() < 1e-9);
        }
    }
}

#[test]
fn local_maxwellian_rejects_nonpositive_density() {
    let s = spec();
    let g = PhaseGrid::new(2, 1, 1.0, 8, 5.0).unwrap();
    let mac = MacroField::uniform(&[1.0, -0.1], &[[0.0; 3]; 2], 1);
    assert_eq!(local_maxwellian(&s, &g, &mac, 1.0).unwrap_err(), Error::NonPositiveDensity { species: 1, x: 0 });
}

#[test]
fn spec_and_grid_validation() {
    assert!(matches!(MixtureSpec::new(vec![1.0, -2.0], vec![1.0, 1.0]), Err(Error::InvalidSpec(_))));
    assert!(matches!(MixtureSpec::new(vec![1.0, 2.0], vec![1.0]), Err(Error::InvalidSpec(_))));
    assert!(matches!(spec().with_gamma(1.5), Err(Error::InvalidSpec(_))));
    assert!(matches!(PhaseGrid::new(1, 4, 1.0, 16, 5.0), Err(Error::InvalidGrid(_))));
    assert!(matches!(PhaseGrid::new(2, 0, 1.0, 16, 5.0), Err(Error::InvalidGrid(_))));
    assert!(matches!(PhaseGrid::new(2, 4, 1.0, 4, 5.0), Err(Error::InvalidGrid(_))));
}

#[test]
fn weighted_inner_product_is_symmetric_and_positive() {
    let s = spec();
    let g = PhaseGrid::new(2, 4, 2.0, 10, 6.0).unwrap();
    let f = DistributionField::from_fn(2, &g, |i, x, v| ((i + 1) as f64 * (x as f64 + 0.3) * (v as f64 * 0.01).sin()).exp() * 1e-3);
    let h = DistributionField::from_fn(2, &g, |i, x, v| ((i + x + v) % 7) as f64 * 1e-4);
    for w in [Weight::MuInv, Weight::MuInvBracketGamma] {
        let a = weighted_inner_product(&s, &g, &f, &h, w);
        let b = weighted_inner_product(&s, &g, &h, &f, w);
        assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        assert!(weighted_inner_product(&s, &g, &f, &f, w) > 0.0);
    }
}

#[test]
fn linear_combination_and_negativity_scan() {
    let g = PhaseGrid::new(2, 2, 1.0, 8, 4.0).unwrap();
    let a = DistributionField::from_fn(1, &g, |_, x, v| (x * 100 + v) as f64);
    let b = DistributionField::from_fn(1, &g, |_, _, _| 1.0);
    let c = DistributionField::linear_combination(2.0, &a, -3.0, &b);
    assert_eq!(c.get(0, 1, 5), 2.0 * 105.0 - 3.0);
    assert_eq!(c.first_negative(), Some((0, 0, 0)));
    assert!(b.first_negative().is_none());
}

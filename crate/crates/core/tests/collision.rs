use mixkinetics::collision::*;
use mixkinetics::mixture::*;
use mixkinetics::numerics::{seeded_rng, InterpOrder};
use mixkinetics::linearized::random_smooth_point;

fn setup(nv: usize) -> (MixtureSpec, PhaseGrid, CollisionOperator) {
    let s = MixtureSpec::new(vec![1.0, 2.0], vec![1.0, 1.0]).unwrap();
    let g = PhaseGrid::new(2, 1, 1.0, nv, PhaseGrid::default_v_max(&s)).unwrap();
    let op = CollisionOperator::new(&s, &g, CollisionConfig { n_sigma: 8, order: InterpOrder::Cubic }).unwrap();
    (s, g, op)
}

fn mu_stack(op: &CollisionOperator) -> Vec<f64> {
    op.mu().iter().flatten().cloned().collect()
}

#[test]
fn post_collision_velocities_conserve_momentum_and_energy() {
    let (v, vs) = ([0.7, -0.2, 0.0], [-0.4, 1.1, 0.0]);
    let sigma = [0.6, 0.8, 0.0];
    let (m1, m2) = (1.0, 2.0);
    let (vp, vsp) = post_collision_velocities(&v, &vs, &sigma, m1, m2);
    for a in 0..2 {
        assert!((m1 * vp[a] + m2 * vsp[a] - m1 * v[a] - m2 * vs[a]).abs() < 1e-14);
    }
    let e = |a: &Vec3, b: &Vec3| m1 * norm2(a) + m2 * norm2(b);
    assert!((e(&vp, &vsp) - e(&v, &vs)).abs() < 1e-14);
}

#[test]
fn corrected_pairs_conserve_to_round_off() {
    let (s, g, op) = setup(12);
    let nv = g.n_vel();
    let mut rng = seeded_rng(5);
    let mu = mu_stack(&op);
    let p = random_smooth_point(&s, &g, 3, &mut rng);
    let f: Vec<f64> = mu.iter().zip(&p).map(|(m, q)| m + 0.2 * q).collect();
    for c in op.correctors() {
        let (i, j) = (c.i, c.j);
        let a = op.q_pair(i, j, &f[i * nv..(i + 1) * nv], &f[j * nv..(j + 1) * nv], &[0.0; 3]).unwrap();
        let b = if i == j { a.clone() } else { op.q_pair(j, i, &f[j * nv..(j + 1) * nv], &f[i * nv..(i + 1) * nv], &[0.0; 3]).unwrap() };
        let raw: Vec<f64> = if i == j { a.clone() } else { [a.clone(), b.clone()].concat() };
        let (ca, cb) = conservative_correction(c, &a, &b);
        let z: Vec<f64> = if i == j { ca } else { [ca, cb].concat() };
        let before = c.residuals(&raw).iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let after = c.residuals(&z).iter().fold(0.0f64, |m, r| m.max(r.abs()));
        assert!(after <= 1e-13, "pair ({i},{j}) residual {after:e}");
        assert!(before > after);
    }
}

#[test]
fn global_equilibrium_is_annihilated() {
    let (s, g, op) = setup(16);
    let mu = mu_stack(&op);
    let q = op.q_point(&mu, &mu, &[0.0; 3]);
    let w = weight_table(&s, &g, Weight::MuInv);
    assert!(point_inner(&w, &q, &q).sqrt() < 1e-5);
}

#[test]
fn entropy_dissipation_is_nonnegative() {
    let (s, g, op) = setup(12);
    let f = mixkinetics::kinetic::counterstream_start(&s, &g, 0.5).unwrap();
    let (_, d) = op.entropy_and_dissipation(&f, &[[0.0; 3]]).unwrap();
    assert!(d > 0.0);
    let mu = global_maxwellian(&s, &g);
    let (_, d0) = op.entropy_and_dissipation(&mu, &[[0.0; 3]]).unwrap();
    assert!(d0.abs() < 1e-6 * d);
}

#[test]
fn q_is_bilinear() {
    let (s, g, op) = setup(10);
    let mut rng = seeded_rng(9);
    let f = random_smooth_point(&s, &g, 2, &mut rng);
    let h = random_smooth_point(&s, &g, 2, &mut rng);
    let k = random_smooth_point(&s, &g, 2, &mut rng);
    let fh: Vec<f64> = f.iter().zip(&h).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
    let lhs = op.q_point_raw(&fh, &k, &[0.0; 3]);
    let a = op.q_point_raw(&f, &k, &[0.0; 3]);
    let b = op.q_point_raw(&h, &k, &[0.0; 3]);
    let scale = lhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for n in 0..lhs.len() {
        assert!((lhs[n] - 2.0 * a[n] + 0.5 * b[n]).abs() <= 1e-12 * scale);
    }
}

// Frozen at nv = 12, n_sigma = 8, seed 11.
#[test]
fn frozen_linearized_norm() {
    let (s, g, op) = setup(12);
    let mut rng = seeded_rng(11);
    let p = random_smooth_point(&s, &g, 3, &mut rng);
    let q = op.q_point(&mu_stack(&op), &p, &[0.0; 3]);
    let w = weight_table(&s, &g, Weight::MuInv);
    let n = point_inner(&w, &q, &q).sqrt();
    assert!((n - 1.55002983165813135).abs() < 1e-9, "{n:.17e}");
}

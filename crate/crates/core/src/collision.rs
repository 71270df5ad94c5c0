//! Discrete bilinear collision operator with pairwise conservative correction.
//!
//! Off-lattice values F(v') are reconstructed from F/W by tensor Lagrange
//! interpolation, with W_i(v) = exp(-m_i |v - w|²/2) for a reference drift w
//! shared by all species at a spatial point. Since
//! W_i(v')W_j(v'_*) = W_i(v)W_j(v_*), any local Maxwellian drifting with w is
//! annihilated up to round-off and truncation.

use crate::error::{Error, Result};
use crate::mixture::{
    dot, mu_table, norm2, sphere_measure, AngularLaw, DistributionField, MixtureSpec, PhaseGrid, Vec3,
};
use crate::numerics::{gauss_legendre, lagrange_weights, InterpOrder};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Quadrature on S^{d-1}.
#[derive(Clone, Debug)]
pub struct AngularRule {
    dim: usize,
    nodes: Vec<Vec3>,
    weights: Vec<f64>,
}

impl AngularRule {
    /// n equispaced angles on S¹; n even keeps the rule invariant under σ → -σ.
    pub fn circle(n: usize) -> Self {
        let w = 2.0 * PI / n as f64;
        let nodes = (0..n)
            .map(|k| {
                let t = 2.0 * PI * (k as f64 + 0.5) / n as f64;
                [t.cos(), t.sin(), 0.0]
            })
            .collect();
        AngularRule { dim: 2, nodes, weights: vec![w; n] }
    }

    /// Gauss-Legendre in cos θ times equispaced φ on S².
    pub fn sphere(n_polar: usize, n_azimuth: usize) -> Self {
        let (z, wz) = gauss_legendre(n_polar);
        let dphi = 2.0 * PI / n_azimuth as f64;
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for (zi, wi) in z.iter().zip(&wz) {
            let r = (1.0 - zi * zi).sqrt();
            for k in 0..n_azimuth {
                let phi = (k as f64 + 0.5) * dphi;
                nodes.push([r * phi.cos(), r * phi.sin(), *zi]);
                weights.push(wi * dphi);
            }
        }
        AngularRule { dim: 3, nodes, weights }
    }

    /// Rule with `n` azimuthal nodes (d=2) or n/2 × n nodes (d=3).
    pub fn for_dim(dim: usize, n: usize) -> Self {
        match dim {
            2 => Self::circle(n),
            _ => Self::sphere((n / 2).max(2), n),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// b(cos θ) for the configured law, with ∫ b dσ = scale.
pub fn angular_density(law: AngularLaw, scale: f64, dim: usize, cos_theta: f64) -> f64 {
    match law {
        AngularLaw::Constant => scale / sphere_measure(dim),
        AngularLaw::GradCutoff => {
            let z = if dim == 2 { 2.0 } else { 4.0 * PI / 3.0 };
            let s = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
            scale * (s * cos_theta).abs() / z
        }
    }
}

/// B_ij = C^Φ_ij |v - v_*|^γ b_ij(cos θ).
pub fn kernel_b(spec: &MixtureSpec, dim: usize, i: usize, j: usize, rel_speed: f64, cos_theta: f64) -> f64 {
    let kin = if spec.gamma == 0.0 { 1.0 } else { rel_speed.powf(spec.gamma) };
    spec.phi_coeff[i][j] * kin * angular_density(spec.angular_law, spec.angular_scale[i][j], dim, cos_theta)
}

/// Elastic post-collision velocities in the σ-representation.
pub fn post_collision_velocities(v: &Vec3, vs: &Vec3, sigma: &Vec3, mi: f64, mj: f64) -> (Vec3, Vec3) {
    let m = mi + mj;
    let g = [v[0] - vs[0], v[1] - vs[1], v[2] - vs[2]];
    let gn = norm2(&g).sqrt();
    let mut vp = [0.0; 3];
    let mut vsp = [0.0; 3];
    for a in 0..3 {
        let center = (mi * v[a] + mj * vs[a]) / m;
        vp[a] = center + mj / m * gn * sigma[a];
        vsp[a] = center - mi / m * gn * sigma[a];
    }
    (vp, vsp)
}

/// Tensor Lagrange stencil at an off-lattice point.
#[derive(Clone, Copy, Debug)]
pub struct PointStencil {
    pub base: [usize; 3],
    pub w: [[f64; 4]; 3],
}

/// Lattice interpolation of F/W.
#[derive(Clone, Debug)]
pub struct Interpolator {
    dim: usize,
    nv: usize,
    h: f64,
    v_max: f64,
    order: InterpOrder,
    /// Outside the box: zero (true) or one-sided extrapolation (false).
    clamp: bool,
}

impl Interpolator {
    pub fn new(grid: &PhaseGrid, order: InterpOrder, clamp: bool) -> Self {
        Interpolator { dim: grid.dim(), nv: grid.nv(), h: grid.h(), v_max: grid.v_max(), order, clamp }
    }

    pub fn points(&self) -> usize {
        self.order.points()
    }

    #[inline]
    pub fn stencil(&self, v: &Vec3) -> Option<PointStencil> {
        let p = self.order.points();
        let mut st = PointStencil { base: [0; 3], w: [[0.0; 4]; 3] };
        for a in 0..self.dim {
            let x = v[a];
            if self.clamp && (x < -self.v_max || x > self.v_max) {
                return None;
            }
            let s = (x + self.v_max) / self.h - 0.5;
            let lo = s.floor() as isize - (p as isize / 2 - 1);
            let b = lo.clamp(0, (self.nv - p) as isize) as usize;
            st.base[a] = b;
            st.w[a] = lagrange_weights(self.order, s - b as f64);
        }
        Some(st)
    }

    #[inline]
    pub fn eval(&self, st: &PointStencil, field: &[f64]) -> f64 {
        let p = self.order.points();
        let nv = self.nv;
        if self.dim == 2 {
            let mut s = 0.0;
            for a in 0..p {
                let row = (st.base[0] + a) * nv + st.base[1];
                let r = &field[row..row + p];
                let mut acc = 0.0;
                for b in 0..p {
                    acc += st.w[1][b] * r[b];
                }
                s += st.w[0][a] * acc;
            }
            s
        } else {
            let mut s = 0.0;
            for a in 0..p {
                let mut sa = 0.0;
                for b in 0..p {
                    let row = ((st.base[0] + a) * nv + st.base[1] + b) * nv + st.base[2];
                    let r = &field[row..row + p];
                    let mut acc = 0.0;
                    for c in 0..p {
                        acc += st.w[2][c] * r[c];
                    }
                    sa += st.w[1][b] * acc;
                }
                s += st.w[0][a] * sa;
            }
            s
        }
    }

    /// Visits (lattice index, weight) of the stencil.
    #[inline]
    pub fn for_each_node(&self, st: &PointStencil, mut f: impl FnMut(usize, f64)) {
        let p = self.order.points();
        let nv = self.nv;
        if self.dim == 2 {
            for a in 0..p {
                for b in 0..p {
                    f((st.base[0] + a) * nv + st.base[1] + b, st.w[0][a] * st.w[1][b]);
                }
            }
        } else {
            for a in 0..p {
                for b in 0..p {
                    for c in 0..p {
                        let idx = ((st.base[0] + a) * nv + st.base[1] + b) * nv + st.base[2] + c;
                        f(idx, st.w[0][a] * st.w[1][b] * st.w[2][c]);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollisionConfig {
    /// Angular nodes: n on S¹, n/2 × n on S².
    pub n_sigma: usize,
    pub order: InterpOrder,
}

impl Default for CollisionConfig {
    fn default() -> Self {
        CollisionConfig { n_sigma: 12, order: InterpOrder::Cubic }
    }
}

/// One collision event of a tape.
#[derive(Clone, Copy, Debug)]
pub struct CollisionEvent {
    pub v_prime: Vec3,
    pub v_star_prime: Vec3,
    /// B_ij times the angular quadrature weight.
    pub weight: f64,
    pub stencil: Option<PointStencil>,
    pub stencil_star: Option<PointStencil>,
}

/// Precomputed collision geometry of the ordered pair (i, j).
///
/// Kernel values are tabulated by lattice difference v - v_*; post-collision
/// velocities and stencils are regenerated per event because storing them for
/// every (v, v_*, σ) would take gigabytes at nv = 24.
#[derive(Clone, Debug)]
pub struct CollisionTape {
    pub i: usize,
    pub j: usize,
    mi: f64,
    mj: f64,
    dim: usize,
    nv: usize,
    rule: AngularRule,
    interp: Interpolator,
    /// B·w_σ per (lattice difference, σ node).
    bw: Vec<f64>,
    /// Σ_σ B·w_σ per lattice difference.
    beta: Vec<f64>,
    velocities: Vec<Vec3>,
    multi: Vec<[usize; 3]>,
}

impl CollisionTape {
    pub fn new(spec: &MixtureSpec, grid: &PhaseGrid, i: usize, j: usize, rule: &AngularRule, interp: Interpolator) -> Self {
        let dim = grid.dim();
        let nv = grid.nv();
        let nd = 2 * nv - 1;
        let n_diff = nd.pow(dim as u32);
        let ns = rule.len();
        let h = grid.h();
        let mut bw = vec![0.0; n_diff * ns];
        let mut beta = vec![0.0; n_diff];
        for d in 0..n_diff {
            let mut g = [0.0; 3];
            let mut r = d;
            for a in (0..dim).rev() {
                g[a] = ((r % nd) as f64 - (nv - 1) as f64) * h;
                r /= nd;
            }
            let gn = norm2(&g).sqrt();
            let mut sum = 0.0;
            for (k, (s, w)) in rule.nodes().iter().zip(rule.weights()).enumerate() {
                let cos = if gn > 0.0 { dot(&g, s) / gn } else { 1.0 };
                let val = kernel_b(spec, dim, i, j, gn, cos) * w;
                bw[d * ns + k] = val;
                sum += val;
            }
            beta[d] = sum;
        }
        CollisionTape {
            i,
            j,
            mi: spec.masses[i],
            mj: spec.masses[j],
            dim,
            nv,
            rule: rule.clone(),
            interp,
            bw,
            beta,
            velocities: grid.velocities().to_vec(),
            multi: (0..grid.n_vel()).map(|k| grid.multi_index(k)).collect(),
        }
    }

    pub fn interpolator(&self) -> &Interpolator {
        &self.interp
    }

    pub fn rule(&self) -> &AngularRule {
        &self.rule
    }

    #[inline]
    fn diff_index(&self, iv: usize, ivs: usize) -> usize {
        let nd = 2 * self.nv - 1;
        let (a, b) = (&self.multi[iv], &self.multi[ivs]);
        let mut idx = 0;
        for k in 0..self.dim {
            idx = idx * nd + (a[k] + self.nv - 1 - b[k]);
        }
        idx
    }

    /// Σ_σ B w_σ for the lattice pair (v, v_*).
    #[inline]
    pub fn beta(&self, iv: usize, ivs: usize) -> f64 {
        self.beta[self.diff_index(iv, ivs)]
    }

    pub fn event(&self, iv: usize, ivs: usize, k: usize) -> CollisionEvent {
        let (vp, vsp) = post_collision_velocities(
            &self.velocities[iv],
            &self.velocities[ivs],
            &self.rule.nodes()[k],
            self.mi,
            self.mj,
        );
        let d = self.diff_index(iv, ivs);
        CollisionEvent {
            v_prime: vp,
            v_star_prime: vsp,
            weight: self.bw[d * self.rule.len() + k],
            stencil: self.interp.stencil(&vp),
            stencil_star: self.interp.stencil(&vsp),
        }
    }

    /// Calls `f(ivs, B w_σ, stencil(v'), stencil(v'_*))` for every event at output
    /// velocity `iv` whose partner weight is nonzero and whose post-collision
    /// velocities are representable.
    #[inline]
    pub fn for_each_event(
        &self,
        iv: usize,
        partner_weight: &[f64],
        mut f: impl FnMut(usize, f64, &PointStencil, &PointStencil),
    ) {
        let v = self.velocities[iv];
        let m = self.mi + self.mj;
        let ai = self.mj / m;
        let aj = self.mi / m;
        let ns = self.rule.len();
        let nodes = self.rule.nodes();
        for (ivs, vs) in self.velocities.iter().enumerate() {
            if partner_weight[ivs] == 0.0 {
                continue;
            }
            let g = [v[0] - vs[0], v[1] - vs[1], v[2] - vs[2]];
            let gn = norm2(&g).sqrt();
            let c = [
                (self.mi * v[0] + self.mj * vs[0]) / m,
                (self.mi * v[1] + self.mj * vs[1]) / m,
                (self.mi * v[2] + self.mj * vs[2]) / m,
            ];
            let d = self.diff_index(iv, ivs);
            let bw = &self.bw[d * ns..(d + 1) * ns];
            for k in 0..ns {
                let s = &nodes[k];
                let vp = [c[0] + ai * gn * s[0], c[1] + ai * gn * s[1], c[2] + ai * gn * s[2]];
                let Some(st) = self.interp.stencil(&vp) else { continue };
                let vsp = [c[0] - aj * gn * s[0], c[1] - aj * gn * s[1], c[2] - aj * gn * s[2]];
                let Some(sts) = self.interp.stencil(&vsp) else { continue };
                f(ivs, bw[k], &st, &sts);
            }
        }
    }

    /// Σ_{v_*} pw(v_*) Σ_σ B w_σ kern(v', v'_*).
    #[inline]
    pub fn gather(&self, iv: usize, partner_weight: &[f64], kern: impl Fn(&PointStencil, &PointStencil) -> f64) -> f64 {
        let mut acc = 0.0;
        let mut cur = usize::MAX;
        let mut inner = 0.0;
        self.for_each_event(iv, partner_weight, |ivs, bw, st, sts| {
            if ivs != cur {
                if cur != usize::MAX {
                    acc += partner_weight[cur] * inner;
                }
                cur = ivs;
                inner = 0.0;
            }
            inner += bw * kern(st, sts);
        });
        if cur != usize::MAX {
            acc += partner_weight[cur] * inner;
        }
        acc
    }

    /// Σ_{v_*} g(v_*) β(v, v_*).
    #[inline]
    pub fn loss_sum(&self, iv: usize, g: &[f64]) -> f64 {
        let mut s = 0.0;
        for (ivs, gv) in g.iter().enumerate() {
            if *gv != 0.0 {
                s += gv * self.beta(iv, ivs);
            }
        }
        s
    }
}

/// Minimal μ^{-1}-weighted adjustment restoring the pairwise conservation sums.
#[derive(Clone, Debug)]
pub struct PairCorrector {
    pub i: usize,
    pub j: usize,
    /// Constraint rows, each a stacked vector over the pair's outputs.
    rows: Vec<Vec<f64>>,
    /// μ-weighted rows: D^{-1} Cᵀ columns.
    weighted: Vec<Vec<f64>>,
    gram_inv: DMatrix<f64>,
    n_vel: usize,
}

impl PairCorrector {
    pub fn new(spec: &MixtureSpec, grid: &PhaseGrid, mu: &[Vec<f64>], i: usize, j: usize) -> Result<Self> {
        let n = grid.n_vel();
        let dim = grid.dim();
        let vel = grid.velocities();
        let blocks = if i == j { 1 } else { 2 };
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for b in 0..blocks {
            let mut r = vec![0.0; blocks * n];
            for k in 0..n {
                r[b * n + k] = 1.0;
            }
            rows.push(r);
        }
        let species = if i == j { vec![i] } else { vec![i, j] };
        for a in 0..dim {
            let mut r = vec![0.0; blocks * n];
            for (b, &s) in species.iter().enumerate() {
                for k in 0..n {
                    r[b * n + k] = spec.masses[s] * vel[k][a];
                }
            }
            rows.push(r);
        }
        let mut r = vec![0.0; blocks * n];
        for (b, &s) in species.iter().enumerate() {
            for k in 0..n {
                r[b * n + k] = spec.masses[s] * norm2(&vel[k]);
            }
        }
        rows.push(r);
        let weighted: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let mut w = r.clone();
                for (b, &s) in species.iter().enumerate() {
                    for k in 0..n {
                        w[b * n + k] *= mu[s][k];
                    }
                }
                w
            })
            .collect();
        let nc = rows.len();
        let gram: DMatrix<f64> =
            DMatrix::from_fn(nc, nc, |a, b| rows[a].iter().zip(&weighted[b]).map(|(x, y)| x * y).sum::<f64>());
        let eig = SymmetricEigen::new(gram.clone());
        let max = eig.eigenvalues.iter().cloned().fold(0.0f64, |m: f64, e: f64| m.max(e.abs()));
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, |a: f64, b: f64| a.min(b));
        if !(min > 1e-13 * max) {
            return Err(Error::SingularConstraintSystem(i, j));
        }
        let inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|e: f64| 1.0 / e));
        let gram_inv = &eig.eigenvectors * inv * eig.eigenvectors.transpose();
        Ok(PairCorrector { i, j, rows, weighted, gram_inv, n_vel: n })
    }

    pub fn n_constraints(&self) -> usize {
        self.rows.len()
    }

    /// Constraint residuals C z of a stacked pair vector.
    pub fn residuals(&self, z: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().zip(z).map(|(a, b)| a * b).sum()).collect()
    }

    /// In-place projection of the stacked (q_ij, q_ji) (or q_ii).
    pub fn apply(&self, z: &mut [f64]) {
        let cz = DVector::from_vec(self.residuals(z));
        let lam = &self.gram_inv * cz;
        for (l, w) in lam.iter().zip(&self.weighted) {
            for (zk, wk) in z.iter_mut().zip(w) {
                *zk -= l * wk;
            }
        }
    }

    pub fn blocks(&self) -> usize {
        if self.i == self.j {
            1
        } else {
            2
        }
    }

    pub fn n_vel(&self) -> usize {
        self.n_vel
    }
}

/// Corrects a raw pair (q_ij, q_ji); returns the corrected pair.
pub fn conservative_correction(corrector: &PairCorrector, raw_qij: &[f64], raw_qji: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = corrector.n_vel();
    if corrector.blocks() == 1 {
        let mut z = raw_qij.to_vec();
        corrector.apply(&mut z);
        return (z.clone(), z);
    }
    let mut z = Vec::with_capacity(2 * n);
    z.extend_from_slice(raw_qij);
    z.extend_from_slice(raw_qji);
    corrector.apply(&mut z);
    let b = z.split_off(n);
    (z, b)
}

/// Reference weights W_i(v) = exp(-m_i |v - w|²/2) per species.
pub fn reference_weights(spec: &MixtureSpec, grid: &PhaseGrid, shift: &Vec3) -> Vec<Vec<f64>> {
    (0..spec.n_species())
        .map(|i| {
            grid.velocities()
                .iter()
                .map(|v| {
                    let d = [v[0] - shift[0], v[1] - shift[1], v[2] - shift[2]];
                    (-0.5 * spec.masses[i] * norm2(&d)).exp()
                })
                .collect()
        })
        .collect()
}

/// The full multi-species operator Q on a phase grid.
#[derive(Clone, Debug)]
pub struct CollisionOperator {
    spec: MixtureSpec,
    grid: PhaseGrid,
    config: CollisionConfig,
    tapes: Vec<CollisionTape>,
    correctors: Vec<PairCorrector>,
    mu: Vec<Vec<f64>>,
}

impl CollisionOperator {
    pub fn new(spec: &MixtureSpec, grid: &PhaseGrid, config: CollisionConfig) -> Result<Self> {
        spec.validate()?;
        if config.n_sigma < 2 || config.n_sigma % 2 == 1 {
            return Err(Error::InvalidGrid("n_sigma must be even and at least 2".into()));
        }
        let n = spec.n_species();
        let rule = AngularRule::for_dim(grid.dim(), config.n_sigma);
        let interp = Interpolator::new(grid, config.order, true);
        let mut tapes = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                tapes.push(CollisionTape::new(spec, grid, i, j, &rule, interp.clone()));
            }
        }
        let mu = mu_table(spec, grid);
        let mut correctors = Vec::new();
        for i in 0..n {
            for j in i..n {
                correctors.push(PairCorrector::new(spec, grid, &mu, i, j)?);
            }
        }
        Ok(CollisionOperator { spec: spec.clone(), grid: grid.clone(), config, tapes, correctors, mu })
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }
    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }
    pub fn config(&self) -> &CollisionConfig {
        &self.config
    }
    pub fn mu(&self) -> &[Vec<f64>] {
        &self.mu
    }
    pub fn tape(&self, i: usize, j: usize) -> &CollisionTape {
        &self.tapes[i * self.spec.n_species() + j]
    }
    pub fn correctors(&self) -> &[PairCorrector] {
        &self.correctors
    }
    pub fn corrector(&self, i: usize, j: usize) -> &PairCorrector {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.correctors.iter().find(|c| c.i == a && c.j == b).expect("pair corrector")
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.grid.n_vel() {
            return Err(Error::GridMismatch(format!("expected {} velocities, got {len}", self.grid.n_vel())));
        }
        Ok(())
    }

    /// Raw Q_ij(F_i, G_j) at one spatial point.
    pub fn q_pair(&self, i: usize, j: usize, fi: &[f64], gj: &[f64], shift: &Vec3) -> Result<Vec<f64>> {
        self.check_len(fi.len())?;
        self.check_len(gj.len())?;
        let w = reference_weights(&self.spec, &self.grid, shift);
        Ok(self.q_pair_weighted(i, j, fi, gj, &w))
    }

    fn q_pair_weighted(&self, i: usize, j: usize, fi: &[f64], gj: &[f64], w: &[Vec<f64>]) -> Vec<f64> {
        let tape = self.tape(i, j);
        let interp = tape.interpolator();
        let fh: Vec<f64> = fi.iter().zip(&w[i]).map(|(f, w)| f / w).collect();
        let gh: Vec<f64> = gj.iter().zip(&w[j]).map(|(g, w)| g / w).collect();
        let dv = self.grid.dv();
        let wj: Vec<f64> = if gj.iter().all(|g| *g == 0.0) { vec![0.0; gj.len()] } else { w[j].clone() };
        (0..fi.len())
            .into_par_iter()
            .map(|iv| {
                let gain = if fi.iter().all(|f| *f == 0.0) {
                    0.0
                } else {
                    w[i][iv] * tape.gather(iv, &wj, |a, b| interp.eval(a, &fh) * interp.eval(b, &gh))
                };
                let loss = if fi[iv] == 0.0 { 0.0 } else { fi[iv] * tape.loss_sum(iv, gj) };
                dv * (gain - loss)
            })
            .collect()
    }

    /// Raw pair outputs (Q_ij(F_i,G_j), Q_ji(F_j,G_i)) for every unordered pair.
    fn raw_pairs(&self, f: &[f64], g: &[f64], w: &[Vec<f64>]) -> Vec<(Vec<f64>, Vec<f64>)> {
        let n = self.spec.n_species();
        let nv = self.grid.n_vel();
        self.correctors
            .iter()
            .map(|c| {
                let (i, j) = (c.i, c.j);
                let fi = &f[i * nv..(i + 1) * nv];
                let gj = &g[j * nv..(j + 1) * nv];
                let a = self.q_pair_weighted(i, j, fi, gj, w);
                let b = if i == j {
                    Vec::new()
                } else {
                    self.q_pair_weighted(j, i, &f[j * nv..(j + 1) * nv], &g[i * nv..(i + 1) * nv], w)
                };
                let _ = n;
                (a, b)
            })
            .collect()
    }

    /// Sums corrected (or raw) pair contributions into a stacked output.
    fn assemble_pairs(&self, pairs: Vec<(Vec<f64>, Vec<f64>)>, correct: bool) -> Vec<f64> {
        let n = self.spec.n_species();
        let nv = self.grid.n_vel();
        let mut out = vec![0.0; n * nv];
        for (c, (a, b)) in self.correctors.iter().zip(pairs) {
            let (a, b) = if correct {
                conservative_correction(c, &a, if c.i == c.j { &a } else { &b })
            } else {
                (a, b)
            };
            for k in 0..nv {
                out[c.i * nv + k] += a[k];
            }
            if c.i != c.j {
                for k in 0..nv {
                    out[c.j * nv + k] += b[k];
                }
            }
        }
        out
    }

    /// Corrected bilinear Q(F, G) at one spatial point on stacked vectors.
    pub fn q_point(&self, f: &[f64], g: &[f64], shift: &Vec3) -> Vec<f64> {
        let w = reference_weights(&self.spec, &self.grid, shift);
        self.assemble_pairs(self.raw_pairs(f, g, &w), true)
    }

    /// Uncorrected bilinear Q(F, G) at one spatial point.
    pub fn q_point_raw(&self, f: &[f64], g: &[f64], shift: &Vec3) -> Vec<f64> {
        let w = reference_weights(&self.spec, &self.grid, shift);
        self.assemble_pairs(self.raw_pairs(f, g, &w), false)
    }

    /// Corrected Q(M, f) + Q(f, M) at one point, with the pair structure kept
    /// together so that the correction acts on the linearized output.
    pub fn linearized_point(&self, m: &[f64], f: &[f64], shift: &Vec3, correct: bool) -> Vec<f64> {
        let w = reference_weights(&self.spec, &self.grid, shift);
        let a = self.raw_pairs(m, f, &w);
        let b = self.raw_pairs(f, m, &w);
        let sum: Vec<(Vec<f64>, Vec<f64>)> = a
            .into_iter()
            .zip(b)
            .map(|((a1, a2), (b1, b2))| {
                (
                    a1.iter().zip(&b1).map(|(x, y)| x + y).collect(),
                    a2.iter().zip(&b2).map(|(x, y)| x + y).collect(),
                )
            })
            .collect();
        self.assemble_pairs(sum, correct)
    }

    /// Corrected Q(F, G) over all spatial points; `shifts[x]` is the reference drift.
    pub fn q_full_bilinear(&self, f: &DistributionField, g: &DistributionField, shifts: &[Vec3]) -> Result<DistributionField> {
        self.check_field(f)?;
        self.check_field(g)?;
        let nx = f.nx();
        let outs: Vec<Vec<f64>> = (0..nx)
            .into_par_iter()
            .map(|x| self.q_point(&f.point(x), &g.point(x), &shifts[x]))
            .collect();
        let mut out = DistributionField::zeros(self.spec.n_species(), &self.grid);
        for (x, o) in outs.iter().enumerate() {
            out.set_point(x, o);
        }
        Ok(out)
    }

    /// Corrected Q(F, F).
    pub fn q_full(&self, f: &DistributionField, shifts: &[Vec3]) -> Result<DistributionField> {
        self.q_full_bilinear(f, f, shifts)
    }

    pub fn check_field(&self, f: &DistributionField) -> Result<()> {
        if f.n_species() != self.spec.n_species() || f.nx() != self.grid.nx() || f.n_vel() != self.grid.n_vel() {
            return Err(Error::GridMismatch("field shape differs from operator grid".into()));
        }
        Ok(())
    }

    /// H = Σ ∫∫ F ln F and D = -Σ ∫∫ Q_i(F,F) ln F_i.
    pub fn entropy_and_dissipation(&self, f: &DistributionField, shifts: &[Vec3]) -> Result<(f64, f64)> {
        if let Some((s, x, v)) = f.data().iter().position(|&a| !(a > 0.0)).map(|p| {
            let nv = f.n_vel();
            let r = p / nv;
            (r / f.nx(), r % f.nx(), p % nv)
        }) {
            return Err(Error::NonPositiveState(format!("species {s}, x {x}, v {v}")));
        }
        let q = self.q_full(f, shifts)?;
        let w = self.grid.dv() * self.grid.dx();
        let mut h = 0.0;
        let mut d = 0.0;
        for (fv, qv) in f.data().iter().zip(q.data()) {
            let l = fv.ln();
            h += fv * l;
            d -= qv * l;
        }
        Ok((h * w, d * w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angular_rules_have_full_measure() {
        let c = AngularRule::circle(12);
        assert!((c.weight_sum() - 2.0 * PI).abs() < 1e-12);
        let s = AngularRule::sphere(6, 12);
        assert!((s.weight_sum() - 4.0 * PI).abs() < 1e-12);
        for n in s.nodes() {
            assert!((norm2(n) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn grad_cutoff_integrates_to_scale() {
        for dim in [2, 3] {
            let rule = AngularRule::for_dim(dim, 400);
            let e = [0.0, 0.0, 1.0];
            let e = if dim == 2 { [1.0, 0.0, 0.0] } else { e };
            let s: f64 = rule
                .nodes()
                .iter()
                .zip(rule.weights())
                .map(|(n, w)| w * angular_density(AngularLaw::GradCutoff, 1.5, dim, dot(n, &e)))
                .sum();
            assert!((s - 1.5).abs() < 1e-4, "dim {dim}: {s}");
        }
    }

    #[test]
    fn stencil_weights_sum_to_one() {
        let g = PhaseGrid::new(2, 1, 1.0, 12, 6.0).unwrap();
        let ip = Interpolator::new(&g, InterpOrder::Cubic, true);
        for v in [[0.13, -5.9, 0.0], [5.99, 5.99, 0.0], [-3.3, 1.7, 0.0]] {
            let st = ip.stencil(&v).unwrap();
            let mut s = 0.0;
            ip.for_each_node(&st, |_, w| s += w);
            assert!((s - 1.0).abs() < 1e-13);
        }
        assert!(ip.stencil(&[6.01, 0.0, 0.0]).is_none());
    }
}

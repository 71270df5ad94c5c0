//! Linearized operators, kernel projection and dense spectral analysis.
//!
//! Two discretizations coexist. `assemble_l_eps` builds the collocation
//! (strong) form of L^ε = Q(M^ε, ·) + Q(·, M^ε) used by the solvers; it shares
//! every quadrature with `CollisionOperator`. `assemble_l` builds a Galerkin
//! form of L around μ from the symmetric Dirichlet form
//! -¼ Σ B μ_i μ_j* (Δh)(Δk), which is exactly self-adjoint and negative
//! semi-definite with the collision invariants as exact kernel.

pub mod carleman;

use crate::collision::{reference_weights, CollisionOperator, CollisionTape, Interpolator, PointStencil};
use crate::error::{Error, Result};
use crate::mixture::{mu_table, norm2, weight_table, DistributionField, MixtureSpec, PhaseGrid, Vec3, Weight};
use crate::numerics::seeded_rng;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::Serialize;

/// Orthonormal (up to quadrature) basis of ker L on the lattice.
#[derive(Clone, Debug)]
pub struct KernelBasis {
    /// Stacked species-velocity vectors φ^(k).
    pub vectors: Vec<Vec<f64>>,
    /// Discrete Gram matrix in the μ^{-1} metric.
    pub gram: DMatrix<f64>,
    gram_inv: DMatrix<f64>,
    /// h^d / μ_i(v), stacked.
    weights: Vec<f64>,
}

impl KernelBasis {
    pub fn new(spec: &MixtureSpec, grid: &PhaseGrid) -> Self {
        let n = spec.n_species();
        let nv = grid.n_vel();
        let d = grid.dim();
        let mu = mu_table(spec, grid);
        let ctot = spec.total_c_inf();
        let rho: f64 = spec.masses.iter().zip(&spec.c_inf).map(|(m, c)| m * c).sum();
        let mut vectors = Vec::new();
        for s in 0..n {
            let mut v = vec![0.0; n * nv];
            for k in 0..nv {
                v[s * nv + k] = mu[s][k] / spec.c_inf[s].sqrt();
            }
            vectors.push(v);
        }
        for a in 0..d {
            let mut v = vec![0.0; n * nv];
            for s in 0..n {
                for k in 0..nv {
                    v[s * nv + k] = grid.velocity(k)[a] * spec.masses[s] * mu[s][k] / rho.sqrt();
                }
            }
            vectors.push(v);
        }
        let mut v = vec![0.0; n * nv];
        for s in 0..n {
            for k in 0..nv {
                let e = (spec.masses[s] * norm2(grid.velocity(k)) - d as f64) / (2.0 * d as f64).sqrt();
                v[s * nv + k] = e * mu[s][k] / ctot.sqrt();
            }
        }
        vectors.push(v);
        let w = weight_table(spec, grid, Weight::MuInv);
        let weights: Vec<f64> = w.into_iter().flatten().collect();
        let nb = vectors.len();
        let gram = DMatrix::from_fn(nb, nb, |a, b| {
            let mut s = 0.0;
            for k in 0..weights.len() {
                s += vectors[a][k] * vectors[b][k] * weights[k];
            }
            s
        });
        let gram_inv = gram.clone().try_inverse().expect("kernel Gram matrix is invertible");
        KernelBasis { vectors, gram, gram_inv, weights }
    }

    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Largest entry of |Gram - I|.
    pub fn gram_defect(&self) -> f64 {
        let n = self.dim();
        (&self.gram - DMatrix::identity(n, n)).abs().max()
    }

    /// π_L at one spatial point: Σ_k φ^(k) (G^{-1} ⟨φ, f⟩)_k.
    pub fn project(&self, f: &[f64]) -> Vec<f64> {
        let coeffs = self.coefficients(f);
        let mut out = vec![0.0; f.len()];
        for (c, v) in coeffs.iter().zip(&self.vectors) {
            for (o, x) in out.iter_mut().zip(v) {
                *o += c * x;
            }
        }
        out
    }

    /// Coordinates of π_L f in the basis.
    pub fn coefficients(&self, f: &[f64]) -> Vec<f64> {
        let m = DVector::from_iterator(
            self.dim(),
            self.vectors.iter().map(|v| {
                let mut s = 0.0;
                for k in 0..f.len() {
                    s += v[k] * f[k] * self.weights[k];
                }
                s
            }),
        );
        (&self.gram_inv * m).iter().cloned().collect()
    }

    /// μ^{-1}-weighted inner product of stacked vectors.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in 0..a.len() {
            s += a[k] * b[k] * self.weights[k];
        }
        s
    }
}

/// π_L applied at every spatial point.
pub fn pi_l(basis: &KernelBasis, f: &DistributionField) -> DistributionField {
    let mut out = f.clone();
    for x in 0..f.nx() {
        out.set_point(x, &basis.project(&f.point(x)));
    }
    out
}

/// π_{T^ε}: spatial average of π_L f, as a stacked vector.
pub fn pi_teps(basis: &KernelBasis, f: &DistributionField) -> Vec<f64> {
    let nx = f.nx();
    let mut acc = vec![0.0; f.n_species() * f.n_vel()];
    for x in 0..nx {
        for (a, p) in acc.iter_mut().zip(basis.project(&f.point(x))) {
            *a += p;
        }
    }
    for a in &mut acc {
        *a /= nx as f64;
    }
    acc
}

/// ν^ε_i(v) = Σ_j ∫∫ B_ij M_j(v_*) dv_* dσ, stacked.
pub fn nu_eps(op: &CollisionOperator, m: &[f64]) -> Vec<f64> {
    let n = op.spec().n_species();
    let nv = op.grid().n_vel();
    let dv = op.grid().dv();
    let mut out = vec![0.0; n * nv];
    for i in 0..n {
        for j in 0..n {
            let tape = op.tape(i, j);
            let mj = &m[j * nv..(j + 1) * nv];
            for iv in 0..nv {
                out[i * nv + iv] += dv * tape.loss_sum(iv, mj);
            }
        }
    }
    out
}

/// Which unordered pairs contribute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairFilter {
    All,
    UnequalMass,
}

fn pair_included(spec: &MixtureSpec, i: usize, j: usize, filter: PairFilter) -> bool {
    match filter {
        PairFilter::All => true,
        PairFilter::UnequalMass => spec.masses[i] != spec.masses[j],
    }
}

/// Raw K^ε f = Σ_j ∫∫ B_ij (M_i' f_j'* + M_j'* f_i' - M_i f_j*), stacked.
pub fn k_eps_direct(op: &CollisionOperator, m: &[f64], f: &[f64], shift: &Vec3) -> Result<Vec<f64>> {
    k_eps_direct_filtered(op, m, f, shift, PairFilter::All)
}

pub fn k_eps_direct_filtered(
    op: &CollisionOperator,
    m: &[f64],
    f: &[f64],
    shift: &Vec3,
    filter: PairFilter,
) -> Result<Vec<f64>> {
    let spec = op.spec();
    let grid = op.grid();
    let n = spec.n_species();
    let nv = grid.n_vel();
    if m.len() != n * nv || f.len() != n * nv {
        return Err(Error::GridMismatch("stacked vector length".into()));
    }
    let w = reference_weights(spec, grid, shift);
    let hat = |v: &[f64], s: usize| -> Vec<f64> { (0..nv).map(|k| v[s * nv + k] / w[s][k]).collect() };
    let dv = grid.dv();
    let mut out = vec![0.0; n * nv];
    for i in 0..n {
        let mi_hat = hat(m, i);
        let fi_hat = hat(f, i);
        for j in 0..n {
            if !pair_included(spec, i, j, filter) {
                continue;
            }
            let tape = op.tape(i, j);
            let ip = tape.interpolator();
            let mj_hat = hat(m, j);
            let fj_hat = hat(f, j);
            let fj = &f[j * nv..(j + 1) * nv];
            for iv in 0..nv {
                let gain = w[i][iv]
                    * tape.gather(iv, &w[j], |a, b| {
                        ip.eval(a, &mi_hat) * ip.eval(b, &fj_hat) + ip.eval(a, &fi_hat) * ip.eval(b, &mj_hat)
                    });
                let loss = m[i * nv + iv] * tape.loss_sum(iv, fj);
                out[i * nv + iv] += dv * (gain - loss);
            }
        }
    }
    Ok(out)
}

/// Corrected L^ε f = Q(M,f) + Q(f,M) at one spatial point.
pub fn l_eps_apply(op: &CollisionOperator, m: &[f64], f: &[f64], shift: &Vec3) -> Vec<f64> {
    op.linearized_point(m, f, shift, true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// Galerkin L around μ.
    L,
    /// Collocation L^ε around a local Maxwellian.
    LEps,
}

/// Dense linearized operator at one spatial point, acting on stacked vectors.
#[derive(Clone, Debug)]
pub struct LinearizedOperator {
    pub kind: OperatorKind,
    pub matrix: DMatrix<f64>,
    /// h^d / μ_i(v), stacked.
    pub weights: Vec<f64>,
    /// Relative asymmetry of the metric-symmetrized matrix before symmetrization.
    pub asymmetry: f64,
    pub n_species: usize,
    pub n_vel: usize,
    pub gamma: f64,
    pub velocities: Vec<Vec3>,
}

impl LinearizedOperator {
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(f)).iter().cloned().collect()
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    /// D^{1/2} A D^{-1/2} with D = diag(weights).
    pub fn symmetrized(&self) -> DMatrix<f64> {
        let s: Vec<f64> = self.weights.iter().map(|w| w.sqrt()).collect();
        let n = self.size();
        DMatrix::from_fn(n, n, |a, b| s[a] * self.matrix[(a, b)] / s[b])
    }
}

fn metric_asymmetry(a: &DMatrix<f64>) -> f64 {
    let diff = (a - a.transpose()).abs().max();
    let scale = a.abs().max();
    if scale > 0.0 {
        diff / scale
    } else {
        0.0
    }
}

fn check_dense(op: &CollisionOperator, dense_limit: usize) -> Result<usize> {
    let size = op.spec().n_species() * op.grid().n_vel();
    if size > dense_limit {
        return Err(Error::DimensionOverflow { order: size, budget: dense_limit });
    }
    Ok(size)
}

pub const DEFAULT_DENSE_LIMIT: usize = 20_000;

/// Galerkin L around μ.
pub fn assemble_l(op: &CollisionOperator, dense_limit: usize) -> Result<LinearizedOperator> {
    let size = check_dense(op, dense_limit)?;
    let s = weak_form_matrix(op);
    let spec = op.spec();
    let grid = op.grid();
    let nv = grid.n_vel();
    let mu: Vec<f64> = mu_table(spec, grid).into_iter().flatten().collect();
    let inv_dv = 1.0 / grid.dv();
    let matrix = DMatrix::from_fn(size, size, |a, b| inv_dv * s[(a, b)] / mu[b]);
    let weights: Vec<f64> = weight_table(spec, grid, Weight::MuInv).into_iter().flatten().collect();
    let mut out = LinearizedOperator {
        kind: OperatorKind::L,
        matrix,
        weights,
        asymmetry: 0.0,
        n_species: spec.n_species(),
        n_vel: nv,
        gamma: spec.gamma,
        velocities: grid.velocities().to_vec(),
    };
    let sym = out.symmetrized();
    out.asymmetry = metric_asymmetry(&sym);
    // Enforce exact symmetry of D^{1/2} A D^{-1/2}.
    let sym = (&sym + sym.transpose()) * 0.5;
    let sq: Vec<f64> = out.weights.iter().map(|w| w.sqrt()).collect();
    out.matrix = DMatrix::from_fn(size, size, |a, b| sym[(a, b)] * sq[b] / sq[a]);
    Ok(out)
}

/// Tapes with one-sided extrapolation so that quadratic test functions are
/// reproduced exactly for every event.
fn galerkin_tapes(op: &CollisionOperator) -> Vec<CollisionTape> {
    let spec = op.spec();
    let grid = op.grid();
    let n = spec.n_species();
    let interp = Interpolator::new(grid, op.config().order, false);
    let rule = op.tape(0, 0).rule().clone();
    let mut tapes = Vec::new();
    for i in 0..n {
        for j in i..n {
            tapes.push(CollisionTape::new(spec, grid, i, j, &rule, interp.clone()));
        }
    }
    tapes
}

/// Lattice points with m_i |v| h above this bound leave the Galerkin space.
///
/// Interpolating h = f/μ couples nodes whose μ differs by about exp(m_i |v| h)
/// per cell, which on coarse lattices produces eigenvalues of that size in the
/// far tail. Excluded points keep only their loss term -ν_i(v). Every retained
/// event is conservative on its own, so the kernel is unaffected.
pub const GALERKIN_TAIL_STIFFNESS: f64 = 12.0;

fn galerkin_active(op: &CollisionOperator) -> Vec<bool> {
    let grid = op.grid();
    let h = grid.h();
    op.spec()
        .masses
        .iter()
        .flat_map(|m| grid.velocities().iter().map(move |v| m * norm2(v).sqrt() * h <= GALERKIN_TAIL_STIFFNESS))
        .collect()
}

fn stencils_active(ip: &Interpolator, st: &PointStencil, offset: usize, active: &[bool]) -> bool {
    let mut ok = true;
    ip.for_each_node(st, |k, w| {
        if w != 0.0 && !active[offset + k] {
            ok = false;
        }
    });
    ok
}

/// S = -¼ Σ_{i,j} Σ_events B w_σ μ_i μ_j* h^{2d} a aᵀ, acting on h = f/μ.
fn weak_form_matrix(op: &CollisionOperator) -> DMatrix<f64> {
    let spec = op.spec();
    let grid = op.grid();
    let nv = grid.n_vel();
    let size = spec.n_species() * nv;
    let mu = mu_table(spec, grid);
    let dv2 = grid.dv() * grid.dv();
    let ones = vec![1.0; nv];
    let mut s = DMatrix::<f64>::zeros(size, size);
    let active = galerkin_active(op);
    let mu_flat: Vec<f64> = mu.iter().flatten().cloned().collect();
    let nu = nu_eps(op, &mu_flat);
    for a in 0..size {
        if !active[a] {
            s[(a, a)] = -nu[a] * mu_flat[a] * grid.dv();
        }
    }
    let mut idx: Vec<usize> = Vec::with_capacity(2 * 64 + 2);
    let mut val: Vec<f64> = Vec::with_capacity(2 * 64 + 2);
    for tape in galerkin_tapes(op) {
        let (i, j) = (tape.i, tape.j);
        let pair_factor = if i == j { 1.0 } else { 2.0 };
        let ip = tape.interpolator().clone();
        for iv in 0..nv {
            if !active[i * nv + iv] {
                continue;
            }
            tape.for_each_event(iv, &ones, |ivs, bw, st, sts| {
                if !active[j * nv + ivs] || !stencils_active(&ip, st, i * nv, &active) || !stencils_active(&ip, sts, j * nv, &active) {
                    return;
                }
                let we = 0.25 * pair_factor * bw * mu[i][iv] * mu[j][ivs] * dv2;
                idx.clear();
                val.clear();
                ip.for_each_node(st, |k, w| {
                    idx.push(i * nv + k);
                    val.push(w);
                });
                ip.for_each_node(sts, |k, w| {
                    idx.push(j * nv + k);
                    val.push(w);
                });
                idx.push(i * nv + iv);
                val.push(-1.0);
                idx.push(j * nv + ivs);
                val.push(-1.0);
                for a in 0..idx.len() {
                    let ca = we * val[a];
                    let ra = idx[a];
                    for b in 0..idx.len() {
                        s[(ra, idx[b])] -= ca * val[b];
                    }
                }
            });
        }
    }
    s
}

/// Matrix-free Galerkin L f around μ, for checking the assembled matrix.
pub fn l_apply_galerkin(op: &CollisionOperator, f: &[f64]) -> Vec<f64> {
    let spec = op.spec();
    let grid = op.grid();
    let nv = grid.n_vel();
    let mu = mu_table(spec, grid);
    let hv: Vec<f64> = (0..f.len()).map(|k| f[k] / mu[k / nv][k % nv]).collect();
    let dv = grid.dv();
    let ones = vec![1.0; nv];
    let active = galerkin_active(op);
    let mu_flat: Vec<f64> = mu.iter().flatten().cloned().collect();
    let nu = nu_eps(op, &mu_flat);
    let mut out: Vec<f64> = (0..f.len()).map(|a| if active[a] { 0.0 } else { -nu[a] * f[a] }).collect();
    for tape in galerkin_tapes(op) {
        let (i, j) = (tape.i, tape.j);
        let pair_factor = if i == j { 1.0 } else { 2.0 };
        let ip = tape.interpolator().clone();
        let hi = &hv[i * nv..(i + 1) * nv];
        let hj = &hv[j * nv..(j + 1) * nv];
        for iv in 0..nv {
            if !active[i * nv + iv] {
                continue;
            }
            tape.for_each_event(iv, &ones, |ivs, bw, st, sts| {
                if !active[j * nv + ivs] || !stencils_active(&ip, st, i * nv, &active) || !stencils_active(&ip, sts, j * nv, &active) {
                    return;
                }
                let we = 0.25 * pair_factor * bw * mu[i][iv] * mu[j][ivs] * dv;
                let delta = ip.eval(st, hi) + ip.eval(sts, hj) - hi[iv] - hj[ivs];
                let c = -we * delta;
                ip.for_each_node(st, |k, w| out[i * nv + k] += c * w);
                ip.for_each_node(sts, |k, w| out[j * nv + k] += c * w);
                out[i * nv + iv] -= c;
                out[j * nv + ivs] -= c;
            });
        }
    }
    out
}

/// Collocation L^ε around the local Maxwellian `m` (stacked) with reference drift `shift`.
/// On lattices where m|v|h is large at the edge the matrix carries spurious
/// positive tail eigenvalues (about 1e9 at nv = 8, 6 at nv = 24 with the default v_max).
pub fn assemble_l_eps(op: &CollisionOperator, m: &[f64], shift: &Vec3, dense_limit: usize) -> Result<LinearizedOperator> {
    let size = check_dense(op, dense_limit)?;
    let spec = op.spec();
    let grid = op.grid();
    let n = spec.n_species();
    let nv = grid.n_vel();
    if m.len() != size {
        return Err(Error::GridMismatch("base state length".into()));
    }
    let w = reference_weights(spec, grid, shift);
    let m_hat: Vec<Vec<f64>> = (0..n).map(|s| (0..nv).map(|k| m[s * nv + k] / w[s][k]).collect()).collect();
    let dv = grid.dv();
    let mut matrix = DMatrix::<f64>::zeros(size, size);
    for c in op.correctors() {
        let (i, j) = (c.i, c.j);
        let blocks: Vec<(usize, usize)> = if i == j { vec![(i, i)] } else { vec![(i, j), (j, i)] };
        let mut pair = DMatrix::<f64>::zeros(blocks.len() * nv, size);
        for (bi, &(a, b)) in blocks.iter().enumerate() {
            let tape = op.tape(a, b);
            let ip = tape.interpolator().clone();
            let ma = &m_hat[a];
            let mb = &m_hat[b];
            let m_b = &m[b * nv..(b + 1) * nv];
            for iv in 0..nv {
                let row = bi * nv + iv;
                let wa = w[a][iv];
                tape.for_each_event(iv, &w[b], |ivs, bw, st, sts| {
                    let coef = dv * wa * w[b][ivs] * bw;
                    let ma_p = ip.eval(st, ma);
                    let mb_p = ip.eval(sts, mb);
                    ip.for_each_node(sts, |k, lw| pair[(row, b * nv + k)] += coef * ma_p * lw / w[b][k]);
                    ip.for_each_node(st, |k, lw| pair[(row, a * nv + k)] += coef * mb_p * lw / w[a][k]);
                });
                let ma_v = m[a * nv + iv];
                let mut nu = 0.0;
                for ivs in 0..nv {
                    let beta = tape.beta(iv, ivs);
                    pair[(row, b * nv + ivs)] -= dv * ma_v * beta;
                    nu += beta * m_b[ivs];
                }
                pair[(row, a * nv + iv)] -= dv * nu;
            }
        }
        let mut z = vec![0.0; blocks.len() * nv];
        for col in 0..size {
            for r in 0..z.len() {
                z[r] = pair[(r, col)];
            }
            c.apply(&mut z);
            for (bi, &(a, _)) in blocks.iter().enumerate() {
                for k in 0..nv {
                    matrix[(a * nv + k, col)] += z[bi * nv + k];
                }
            }
        }
    }
    let weights: Vec<f64> = weight_table(spec, grid, Weight::MuInv).into_iter().flatten().collect();
    let mut out = LinearizedOperator {
        kind: OperatorKind::LEps,
        matrix,
        weights,
        asymmetry: 0.0,
        n_species: n,
        n_vel: nv,
        gamma: spec.gamma,
        velocities: grid.velocities().to_vec(),
    };
    out.asymmetry = metric_asymmetry(&out.symmetrized());
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralReport {
    pub kernel_dim: usize,
    pub lambda_gap: f64,
    /// Eigenvalues in decreasing order, first entries.
    pub head_eigenvalues: Vec<f64>,
    pub spectral_radius: f64,
    pub kernel_tol: f64,
    /// Largest |λ| inside the kernel cluster.
    pub kernel_cluster: f64,
    /// Largest principal angle between the numerical kernel and the basis.
    pub max_principal_angle: f64,
}

pub fn spectral_report(op: &LinearizedOperator, basis: &KernelBasis, head: usize) -> Result<SpectralReport> {
    if op.kind != OperatorKind::L {
        return Err(Error::EigenFailure("spectral report requires the operator around μ".into()));
    }
    let sym = op.symmetrized();
    let sym = (&sym + sym.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, 1e-15, 0).ok_or_else(|| Error::EigenFailure("no convergence".into()))?;
    let vals: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenFailure("non-finite eigenvalue".into()));
    }
    let radius = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-7 * radius;
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|a, b| vals[*b].partial_cmp(&vals[*a]).unwrap());
    let kernel: Vec<usize> = order.iter().cloned().filter(|&k| vals[k].abs() <= tol).collect();
    let gap = order.iter().map(|&k| vals[k]).find(|v| *v < -tol).map(|v| -v).unwrap_or(0.0);
    let cluster = kernel.iter().fold(0.0f64, |m, &k| m.max(vals[k].abs()));
    // Principal angles between span(kernel eigvecs) and span(D^{1/2} φ).
    let size = op.size();
    let sq: Vec<f64> = op.weights.iter().map(|w| w.sqrt()).collect();
    let phi = DMatrix::from_fn(size, basis.dim(), |r, c| basis.vectors[c][r] * sq[r]);
    let q2 = phi.qr().q();
    let q1 = DMatrix::from_fn(size, kernel.len(), |r, c| eig.eigenvectors[(r, kernel[c])]);
    let angle = if kernel.len() != basis.dim() {
        std::f64::consts::FRAC_PI_2
    } else {
        let resid = &q1 - &q2 * (q2.transpose() * &q1);
        let s = resid.singular_values().iter().cloned().fold(0.0f64, f64::max);
        s.min(1.0).asin()
    };
    Ok(SpectralReport {
        kernel_dim: kernel.len(),
        lambda_gap: gap,
        head_eigenvalues: order.iter().take(head).map(|&k| vals[k]).collect(),
        spectral_radius: radius,
        kernel_tol: tol,
        kernel_cluster: cluster,
        max_principal_angle: angle,
    })
}

/// Smooth random stacked field μ_i(v) · p_i(v) with p_i a random polynomial of
/// total degree ≤ `degree`, coefficients uniform in [-1, 1].
pub fn random_smooth_point(spec: &MixtureSpec, grid: &PhaseGrid, degree: usize, rng: &mut impl Rng) -> Vec<f64> {
    random_polynomial_times(&mu_table(spec, grid), grid, degree, rng)
}

/// Same with the envelope exp(-m_i |v - w|²/2) used by the interpolation at shift w.
pub fn random_smooth_point_shifted(
    spec: &MixtureSpec,
    grid: &PhaseGrid,
    degree: usize,
    shift: &Vec3,
    rng: &mut impl Rng,
) -> Vec<f64> {
    random_polynomial_times(&reference_weights(spec, grid, shift), grid, degree, rng)
}

fn random_polynomial_times(mu: &[Vec<f64>], grid: &PhaseGrid, degree: usize, rng: &mut impl Rng) -> Vec<f64> {
    let d = grid.dim();
    let mut monomials: Vec<[usize; 3]> = Vec::new();
    for a in 0..=degree {
        for b in 0..=degree {
            for c in 0..=degree {
                let c = if d == 2 { if c > 0 { continue } else { 0 } } else { c };
                if a + b + c <= degree {
                    monomials.push([a, b, c]);
                }
            }
        }
    }
    let nv = grid.n_vel();
    let mut out = vec![0.0; mu.len() * nv];
    for s in 0..mu.len() {
        let coef: Vec<f64> = monomials.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        for k in 0..nv {
            let v = grid.velocity(k);
            let p: f64 = monomials
                .iter()
                .zip(&coef)
                .map(|(e, c)| c * v[0].powi(e[0] as i32) * v[1].powi(e[1] as i32) * v[2].powi(e[2] as i32))
                .sum();
            out[s * nv + k] = mu[s][k] * p;
        }
    }
    out
}

/// ⟨v⟩^γ-weighted smallest nonzero generalized eigenvalue of -L: the best λ with
/// ⟨Lf, f⟩ ≤ -λ ‖f^⊥‖²_{⟨v⟩^{γ/2}}.
pub fn bracket_gap(l: &LinearizedOperator) -> Result<f64> {
    let sym = l.symmetrized();
    let sym = (&sym + sym.transpose()) * 0.5;
    let nv = l.n_vel;
    let br: Vec<f64> = (0..l.size()).map(|k| (1.0 + norm2(&l.velocities[k % nv])).powf(l.gamma / 2.0)).collect();
    let scaled = DMatrix::from_fn(l.size(), l.size(), |a, b| -sym[(a, b)] / (br[a] * br[b]).sqrt());
    let eig = SymmetricEigen::try_new(scaled, 1e-15, 0).ok_or_else(|| Error::EigenFailure("no convergence".into()))?;
    let radius = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut v: Vec<f64> = eig.eigenvalues.iter().cloned().filter(|x| *x > 1e-7 * radius).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.first().cloned().ok_or_else(|| Error::EigenFailure("empty spectrum".into()))
}

#[derive(Clone, Debug, Serialize)]
pub struct CoercivityProbe {
    pub lambda_hat: f64,
    /// Largest r(f) over the samples.
    pub defect: f64,
}

/// r(f) = [⟨L^ε f, f⟩ + λ̂ ‖f^⊥‖²_{⟨v⟩^{γ/2}}] / ‖π_L f‖², maximized over random smooth f.
pub fn coercivity_probe(
    l_eps: &LinearizedOperator,
    basis: &KernelBasis,
    spec: &MixtureSpec,
    grid: &PhaseGrid,
    lambda_hat: f64,
    n_samples: usize,
    seed: u64,
) -> CoercivityProbe {
    let mut rng = seeded_rng(seed);
    let nv = grid.n_vel();
    let br: Vec<f64> = (0..l_eps.size()).map(|k| (1.0 + norm2(grid.velocity(k % nv))).powf(spec.gamma / 2.0)).collect();
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..n_samples {
        let f = random_smooth_point(spec, grid, 3, &mut rng);
        let lf = l_eps.apply(&f);
        let pf = basis.project(&f);
        let perp: Vec<f64> = f.iter().zip(&pf).map(|(a, b)| a - b).collect();
        let perp_br: Vec<f64> = perp.iter().zip(&br).map(|(a, b)| a * b).collect();
        let num = basis.inner(&lf, &f) + lambda_hat * basis.inner(&perp, &perp_br);
        let den = basis.inner(&pf, &pf);
        worst = worst.max(num / den);
    }
    CoercivityProbe { lambda_hat, defect: worst }
}

/// Gram-based bound C_π with ‖π_L f‖_{⟨v⟩^{γ/2}} ≤ C_π ‖π_L f‖ on the kernel.
pub fn kernel_norm_equivalence_bound(basis: &KernelBasis, spec: &MixtureSpec, grid: &PhaseGrid) -> f64 {
    let nv = grid.n_vel();
    let w = basis.weights();
    let nb = basis.dim();
    let g2 = DMatrix::from_fn(nb, nb, |a, b| {
        let mut s = 0.0;
        for k in 0..w.len() {
            let br = (1.0 + norm2(grid.velocity(k % nv))).powf(spec.gamma / 2.0);
            s += basis.vectors[a][k] * basis.vectors[b][k] * w[k] * br;
        }
        s
    });
    // Generalized Rayleigh quotient against the plain Gram matrix.
    let l = basis.gram.clone().cholesky().expect("Gram is positive definite");
    let linv = l.l().try_inverse().expect("invertible factor");
    let m = &linv * g2 * linv.transpose();
    let eig = SymmetricEigen::new((&m + m.transpose()) * 0.5);
    eig.eigenvalues.iter().fold(0.0f64, |a, b| a.max(*b)).sqrt()
}

/// Convenience: random coefficient vector.
pub fn random_vector(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

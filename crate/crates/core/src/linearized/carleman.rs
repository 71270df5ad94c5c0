//! Carleman kernel form of K^ε for unequal-mass pairs.
//!
//! With η = v - y, M = m_i + m_j and r = m_i/m_j:
//!
//! * κ1(v, y) = (M/m_j)^{d-1} R^{d-2}/|1-r| ∫_{S^{d-1}} |u|^{2-d} B(|u|, cos θ) M_i(O + Rω) dω,
//!   O = (m_i v - m_j y)/(m_i - m_j), R = m_j|η|/|m_i - m_j|, u = (1+r)v - y - r w;
//! * κ2(v, y) = (M/m_j)^{d-1}/|η| ∫_{η⊥} |u|^{2-d} B(|u|, cos θ) M_j(p + ω) dω,
//!   p = (M v - (m_i - m_j) y)/(2 m_j), |u|² = a² + |ω|², a = M|η|/(2 m_j);
//! * κ3(v, y) = M_i(v) C^Φ |η|^γ ∫ b dσ,
//!
//! so that K^ε_i f = Σ_j ∫ (κ1 f_j + κ2 f_i - κ3 f_j) dy.

use crate::collision::{reference_weights, CollisionOperator, Interpolator};
use crate::error::{Error, Result};
use crate::mixture::{dot, maxwellian, norm2, AngularLaw, MixtureSpec, PhaseGrid, Vec3};
use crate::numerics::{gauss_legendre, InterpOrder};
use crate::collision::angular_density;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarlemanConfig {
    /// Planar truncation half-width; default 8/√(min m).
    pub x_max: Option<f64>,
    /// Gauss-Legendre nodes per planar sub-interval.
    pub x_nodes: usize,
    /// Azimuthal nodes of the polar table quadrature around each v.
    pub polar_phi: usize,
    /// Radial panel width of the polar table quadrature.
    pub polar_panel: f64,
    /// Gauss-Legendre nodes per radial panel.
    pub polar_order: usize,
}

impl Default for CarlemanConfig {
    fn default() -> Self {
        CarlemanConfig { x_max: None, x_nodes: 48, polar_phi: 256, polar_panel: 0.75, polar_order: 8 }
    }
}

impl CarlemanConfig {
    pub fn x_max(&self, spec: &MixtureSpec) -> f64 {
        self.x_max.unwrap_or(8.0 / spec.min_mass().sqrt())
    }
}

/// Local Maxwellian at one spatial point: densities c_i and drifts ε u_i.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseMaxwellian {
    pub c: Vec<f64>,
    pub drift: Vec<Vec3>,
}

impl BaseMaxwellian {
    pub fn global(spec: &MixtureSpec) -> Self {
        BaseMaxwellian { c: spec.c_inf.clone(), drift: vec![[0.0; 3]; spec.n_species()] }
    }

    #[inline]
    pub fn value(&self, spec: &MixtureSpec, dim: usize, i: usize, v: &Vec3) -> f64 {
        maxwellian(dim, spec.masses[i], self.c[i], &self.drift[i], 1.0, v)
    }

    /// Stacked lattice values.
    pub fn stacked(&self, spec: &MixtureSpec, grid: &PhaseGrid) -> Vec<f64> {
        let mut out = Vec::with_capacity(spec.n_species() * grid.n_vel());
        for i in 0..spec.n_species() {
            for v in grid.velocities() {
                out.push(self.value(spec, grid.dim(), i, v));
            }
        }
        out
    }
}

#[inline]
fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// |u|^{2-d} B(|u|, cos θ).
#[inline]
fn reduced_kernel(spec: &MixtureSpec, dim: usize, i: usize, j: usize, u2: f64, cos: f64) -> f64 {
    let expo = (2.0 - dim as f64 + spec.gamma) / 2.0;
    let radial = if expo == 0.0 { 1.0 } else { u2.powf(expo) };
    spec.phi_coeff[i][j] * radial * angular_density(spec.angular_law, spec.angular_scale[i][j], dim, cos)
}

/// Reflection L(n, X) = 2 (e1 + n)·X / |e1 + n|² (e1 + n) - X, defined for n₁ > -1.
pub fn reflection_map(n: &Vec3, x: &Vec3) -> Vec3 {
    let e = [1.0 + n[0], n[1], n[2]];
    let s = 2.0 * dot(&e, x) / norm2(&e);
    [s * e[0] - x[0], s * e[1] - x[1], s * e[2] - x[2]]
}

/// Angular node count adapted to the concentration of exp(-m R O'·ω).
fn sphere_nodes(concentration: f64) -> usize {
    let n = (80.0 * concentration.max(0.0)).sqrt().ceil() as usize + 32;
    n + n % 2
}

pub fn carleman_kappa1(spec: &MixtureSpec, dim: usize, i: usize, j: usize, v: &Vec3, vs: &Vec3, base: &BaseMaxwellian) -> Result<f64> {
    carleman_kappa1_nodes(spec, dim, i, j, v, vs, base, None)
}

/// κ1 with an explicit angular node count (None: adaptive).
#[allow(clippy::too_many_arguments)]
pub fn carleman_kappa1_nodes(
    spec: &MixtureSpec,
    dim: usize,
    i: usize,
    j: usize,
    v: &Vec3,
    y: &Vec3,
    base: &BaseMaxwellian,
    nodes: Option<usize>,
) -> Result<f64> {
    let (mi, mj) = (spec.masses[i], spec.masses[j]);
    if mi == mj {
        return Err(Error::EqualMassUnsupported(i, j));
    }
    let eta = sub(v, y);
    let eta_n = norm2(&eta).sqrt();
    if eta_n == 0.0 {
        return Err(Error::ZeroRelativeVelocity);
    }
    let r = mi / mj;
    let mt = mi + mj;
    let o: Vec3 = [
        (mi * v[0] - mj * y[0]) / (mi - mj),
        (mi * v[1] - mj * y[1]) / (mi - mj),
        (mi * v[2] - mj * y[2]) / (mi - mj),
    ];
    let rad = mj * eta_n / (mi - mj).abs();
    let op = sub(&o, &base.drift[i]);
    let opn = norm2(&op).sqrt();
    let gap = (opn - rad).powi(2) * mi / 2.0;
    if gap > 745.0 {
        return Ok(0.0);
    }
    let norm = base.c[i] * (mi / (2.0 * PI)).powf(dim as f64 / 2.0);
    let pre = (mt / mj).powi(dim as i32 - 1) * rad.powi(dim as i32 - 2) / (1.0 - r).abs();
    let integrand = |w: &Vec3| -> f64 {
        let u: Vec3 = [
            (1.0 + r) * v[0] - y[0] - r * w[0],
            (1.0 + r) * v[1] - y[1] - r * w[1],
            (1.0 + r) * v[2] - y[2] - r * w[2],
        ];
        let u2 = norm2(&u);
        let wy = sub(w, y);
        let cos = if u2 > 0.0 { (dot(&u, &wy) / u2).clamp(-1.0, 1.0) } else { 1.0 };
        let dw = sub(w, &base.drift[i]);
        reduced_kernel(spec, dim, i, j, u2, cos) * (-0.5 * mi * norm2(&dw)).exp()
    };
    let n = nodes.unwrap_or_else(|| sphere_nodes(mi * opn * rad));
    let sum = if dim == 2 {
        let dphi = 2.0 * PI / n as f64;
        let mut s = 0.0;
        for k in 0..n {
            let t = (k as f64 + 0.5) * dphi;
            let w = [o[0] + rad * t.cos(), o[1] + rad * t.sin(), 0.0];
            s += integrand(&w);
        }
        s * dphi
    } else {
        // Pole along -O' where the Gaussian peaks.
        let pole = if opn > 0.0 { [-op[0] / opn, -op[1] / opn, -op[2] / opn] } else { [0.0, 0.0, 1.0] };
        let (e1, e2) = orthonormal_complement(&pole);
        let (z, wz) = gauss_legendre(n / 2);
        let dphi = 2.0 * PI / n as f64;
        let mut s = 0.0;
        for (zt, wt) in z.iter().zip(&wz) {
            let st = (1.0 - zt * zt).max(0.0).sqrt();
            for k in 0..n {
                let ph = (k as f64 + 0.5) * dphi;
                let (c, sn) = (ph.cos(), ph.sin());
                let om = [
                    zt * pole[0] + st * (c * e1[0] + sn * e2[0]),
                    zt * pole[1] + st * (c * e1[1] + sn * e2[1]),
                    zt * pole[2] + st * (c * e1[2] + sn * e2[2]),
                ];
                let w = [o[0] + rad * om[0], o[1] + rad * om[1], o[2] + rad * om[2]];
                s += wt * dphi * integrand(&w);
            }
        }
        s
    };
    Ok(norm * pre * sum)
}

fn orthonormal_complement(n: &Vec3) -> (Vec3, Vec3) {
    let t = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let d = dot(&t, n);
    let a = [t[0] - d * n[0], t[1] - d * n[1], t[2] - d * n[2]];
    let an = norm2(&a).sqrt();
    let a = [a[0] / an, a[1] / an, a[2] / an];
    let b = [n[1] * a[2] - n[2] * a[1], n[2] * a[0] - n[0] * a[2], n[0] * a[1] - n[1] * a[0]];
    (a, b)
}

/// Geometry shared by the κ2 prefactor and planar integral.
struct PlaneGeometry {
    n: Vec3,
    a: f64,
    /// p - ε u_j split along n and in the plane.
    q_normal: f64,
    q_perp: Vec3,
}

fn plane_geometry(spec: &MixtureSpec, i: usize, j: usize, v: &Vec3, y: &Vec3, base: &BaseMaxwellian) -> Result<PlaneGeometry> {
    let (mi, mj) = (spec.masses[i], spec.masses[j]);
    let eta = sub(v, y);
    let eta_n = norm2(&eta).sqrt();
    if eta_n == 0.0 {
        return Err(Error::ZeroRelativeVelocity);
    }
    let mut n = [eta[0] / eta_n, eta[1] / eta_n, eta[2] / eta_n];
    // The plane η⊥ is even in η; use the hemisphere where L(n, ·) is defined.
    if n[0] < 0.0 {
        n = [-n[0], -n[1], -n[2]];
    }
    let mt = mi + mj;
    let p = [
        (mt * v[0] - (mi - mj) * y[0]) / (2.0 * mj),
        (mt * v[1] - (mi - mj) * y[1]) / (2.0 * mj),
        (mt * v[2] - (mi - mj) * y[2]) / (2.0 * mj),
    ];
    let q = sub(&p, &base.drift[j]);
    let qn = dot(&q, &n);
    let q_perp = [q[0] - qn * n[0], q[1] - qn * n[1], q[2] - qn * n[2]];
    Ok(PlaneGeometry { n, a: mt * eta_n / (2.0 * mj), q_normal: qn, q_perp })
}

/// P_ij(v, η) = C^Φ-free prefactor (M/m_j)^{d-1}/|η| c_j (m_j/2π)^{d/2} exp(-m_j ((p - εu_j)·n)²/2).
pub fn kappa2_prefactor(spec: &MixtureSpec, dim: usize, i: usize, j: usize, v: &Vec3, y: &Vec3, base: &BaseMaxwellian) -> Result<f64> {
    let g = plane_geometry(spec, i, j, v, y, base)?;
    let (mi, mj) = (spec.masses[i], spec.masses[j]);
    let eta_n = norm2(&sub(v, y)).sqrt();
    Ok(((mi + mj) / mj).powi(dim as i32 - 1) / eta_n
        * base.c[j]
        * (mj / (2.0 * PI)).powf(dim as f64 / 2.0)
        * (-0.5 * mj * g.q_normal * g.q_normal).exp())
}

#[allow(clippy::too_many_arguments)]
pub fn carleman_kappa2(
    spec: &MixtureSpec,
    dim: usize,
    i: usize,
    j: usize,
    v: &Vec3,
    y: &Vec3,
    base: &BaseMaxwellian,
    cfg: &CarlemanConfig,
) -> Result<f64> {
    kappa2_with_rule(spec, dim, i, j, v, y, base, cfg, &gauss_legendre(cfg.x_nodes))
}

#[allow(clippy::too_many_arguments)]
fn kappa2_with_rule(
    spec: &MixtureSpec,
    dim: usize,
    i: usize,
    j: usize,
    v: &Vec3,
    y: &Vec3,
    base: &BaseMaxwellian,
    cfg: &CarlemanConfig,
    rule: &(Vec<f64>, Vec<f64>),
) -> Result<f64> {
    let g = plane_geometry(spec, i, j, v, y, base)?;
    let pre = kappa2_prefactor(spec, dim, i, j, v, y, base)?;
    if pre == 0.0 {
        return Ok(0.0);
    }
    let mj = spec.masses[j];
    let x_max = cfg.x_max(spec);
    let a2 = g.a * g.a;
    let integrand = |om: &Vec3| -> f64 {
        let w2 = norm2(om);
        let cos = (w2 - a2) / (w2 + a2);
        let d = [g.q_perp[0] + om[0], g.q_perp[1] + om[1], g.q_perp[2] + om[2]];
        reduced_kernel(spec, dim, i, j, a2 + w2, cos) * (-0.5 * mj * norm2(&d)).exp()
    };
    let smooth = spec.gamma == 0.0 && spec.angular_law == AngularLaw::Constant;
    let planar = if dim == 2 {
        let t = reflection_map(&g.n, &[0.0, 1.0, 0.0]);
        let xc = -dot(&g.q_perp, &t);
        let (lo, hi) = (xc - x_max, xc + x_max);
        let mut cuts = vec![lo];
        if !smooth {
            for c in [-g.a, 0.0, g.a] {
                if c > lo && c < hi {
                    cuts.push(c);
                }
            }
        }
        cuts.push(hi);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut s = 0.0;
        for w in cuts.windows(2) {
            let (half, mid) = (0.5 * (w[1] - w[0]), 0.5 * (w[1] + w[0]));
            for (z, wz) in rule.0.iter().zip(&rule.1) {
                let xk = mid + half * z;
                s += half * wz * integrand(&[xk * t[0], xk * t[1], xk * t[2]]);
            }
        }
        s
    } else {
        // Polar coordinates in the plane about ω = 0.
        let ta = reflection_map(&g.n, &[0.0, 1.0, 0.0]);
        let tb = reflection_map(&g.n, &[0.0, 0.0, 1.0]);
        let qp = norm2(&g.q_perp).sqrt();
        let rho_lo = (qp - x_max).max(0.0);
        let rho_hi = qp + x_max;
        let mut cuts = vec![rho_lo];
        for c in [g.a, qp] {
            if c > rho_lo && c < rho_hi {
                cuts.push(c);
            }
        }
        cuts.push(rho_hi);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n_psi = 96;
        let dpsi = 2.0 * PI / n_psi as f64;
        let mut s = 0.0;
        for w in cuts.windows(2) {
            let (half, mid) = (0.5 * (w[1] - w[0]), 0.5 * (w[1] + w[0]));
            for (z, wz) in rule.0.iter().zip(&rule.1) {
                let (rho, wr) = (mid + half * z, half * wz);
                for k in 0..n_psi {
                    let ps = (k as f64 + 0.5) * dpsi;
                    let (c, sn) = (ps.cos(), ps.sin());
                    let om = [
                        rho * (c * ta[0] + sn * tb[0]),
                        rho * (c * ta[1] + sn * tb[1]),
                        rho * (c * ta[2] + sn * tb[2]),
                    ];
                    s += wr * dpsi * rho * integrand(&om);
                }
            }
        }
        s
    };
    Ok(pre * planar)
}

/// κ3(v, y) = M_i(v) C^Φ_ij |η|^γ ∫ b_ij dσ.
pub fn carleman_kappa3(spec: &MixtureSpec, dim: usize, i: usize, j: usize, v: &Vec3, y: &Vec3, base: &BaseMaxwellian) -> f64 {
    let eta = norm2(&sub(v, y)).sqrt();
    let kin = if spec.gamma == 0.0 { 1.0 } else { eta.powf(spec.gamma) };
    base.value(spec, dim, i, v) * spec.phi_coeff[i][j] * kin * spec.angular_scale[i][j]
}

/// Lattice kernels of one ordered pair: out_i(v) += Σ_n k1[v,n] f_j(n) + k2[v,n] f_i(n) - k3[v,n] f_j(n).
///
/// κ1 and κ2 are integrated by polar quadrature about v and mapped onto the
/// lattice through the W-weighted interpolation stencils; κ3 holds h^d κ3(v, v_*).
#[derive(Clone, Debug)]
pub struct PairTable {
    pub i: usize,
    pub j: usize,
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    pub k3: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct CarlemanKernelTable {
    pub grid: PhaseGrid,
    pub n_species: usize,
    pub pairs: Vec<PairTable>,
}

impl CarlemanKernelTable {
    pub fn all_finite(&self) -> bool {
        self.pairs.iter().all(|p| p.k1.iter().chain(&p.k2).chain(&p.k3).all(|x| x.is_finite()))
    }

    pub fn kappa3_nonnegative(&self) -> bool {
        self.pairs.iter().all(|p| p.k3.iter().all(|x| *x >= 0.0))
    }
}

/// Builds lattice kernels for every ordered unequal-mass pair (d = 2).
pub fn build_table(
    op: &CollisionOperator,
    base: &BaseMaxwellian,
    shift: &Vec3,
    cfg: &CarlemanConfig,
) -> Result<CarlemanKernelTable> {
    let spec = op.spec();
    let grid = op.grid();
    if grid.dim() != 2 {
        return Err(Error::InvalidGrid("kernel tables are implemented for d = 2".into()));
    }
    let n = spec.n_species();
    let nv = grid.n_vel();
    let w = reference_weights(spec, grid, shift);
    let ip = Interpolator::new(grid, InterpOrder::Cubic, true);
    let vmax = grid.v_max();
    let (gx, gw) = gauss_legendre(cfg.polar_order);
    let xrule = gauss_legendre(cfg.x_nodes);
    let dphi = 2.0 * PI / cfg.polar_phi as f64;
    let dv = grid.dv();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if spec.masses[i] == spec.masses[j] {
                continue;
            }
            let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..nv)
                .into_par_iter()
                .map(|iv| {
                    let v = *grid.velocity(iv);
                    let mut r1 = vec![0.0; nv];
                    let mut r2 = vec![0.0; nv];
                    let mut r3 = vec![0.0; nv];
                    for (ivs, vs) in grid.velocities().iter().enumerate() {
                        r3[ivs] = dv * carleman_kappa3(spec, 2, i, j, &v, vs, base);
                    }
                    for k in 0..cfg.polar_phi {
                        let ph = (k as f64 + 0.5) * dphi;
                        let e = [ph.cos(), ph.sin()];
                        let mut rho_b = f64::INFINITY;
                        for a in 0..2 {
                            if e[a] != 0.0 {
                                let wall = if e[a] > 0.0 { vmax } else { -vmax };
                                rho_b = rho_b.min((wall - v[a]) / e[a]);
                            }
                        }
                        let panels = (rho_b / cfg.polar_panel).ceil().max(1.0) as usize;
                        let pw = rho_b / panels as f64;
                        for pnl in 0..panels {
                            for (x, wx) in gx.iter().zip(&gw) {
                                let rho = pw * (pnl as f64 + 0.5 * (x + 1.0));
                                let wq = dphi * rho * 0.5 * pw * wx;
                                let y = [v[0] + rho * e[0], v[1] + rho * e[1], 0.0];
                                let Some(st) = ip.stencil(&y) else { continue };
                                let k1 = carleman_kappa1(spec, 2, i, j, &v, &y, base).unwrap_or(0.0);
                                let k2 = kappa2_with_rule(spec, 2, i, j, &v, &y, base, cfg, &xrule).unwrap_or(0.0);
                                let dyj = [y[0] - shift[0], y[1] - shift[1], 0.0];
                                let wyj = (-0.5 * spec.masses[j] * norm2(&dyj)).exp();
                                let wyi = (-0.5 * spec.masses[i] * norm2(&dyj)).exp();
                                let c1 = wq * k1 * wyj;
                                let c2 = wq * k2 * wyi;
                                ip.for_each_node(&st, |nd, lw| {
                                    r1[nd] += c1 * lw / w[j][nd];
                                    r2[nd] += c2 * lw / w[i][nd];
                                });
                            }
                        }
                    }
                    (r1, r2, r3)
                })
                .collect();
            let mut k1 = Vec::with_capacity(nv * nv);
            let mut k2 = Vec::with_capacity(nv * nv);
            let mut k3 = Vec::with_capacity(nv * nv);
            for (a, b, c) in rows {
                k1.extend(a);
                k2.extend(b);
                k3.extend(c);
            }
            pairs.push(PairTable { i, j, k1, k2, k3 });
        }
    }
    Ok(CarlemanKernelTable { grid: grid.clone(), n_species: n, pairs })
}

/// Σ_j ∫ κ1 f_j + κ2 f_i - κ3 f_j over the tabulated pairs, stacked.
pub fn kernel_apply(table: &CarlemanKernelTable, grid: &PhaseGrid, f: &[f64]) -> Result<Vec<f64>> {
    if table.grid != *grid {
        return Err(Error::TableGridMismatch);
    }
    let nv = grid.n_vel();
    if f.len() != table.n_species * nv {
        return Err(Error::GridMismatch("stacked vector length".into()));
    }
    let mut out = vec![0.0; f.len()];
    for p in &table.pairs {
        let fi = &f[p.i * nv..(p.i + 1) * nv];
        let fj = &f[p.j * nv..(p.j + 1) * nv];
        for iv in 0..nv {
            let row = iv * nv;
            let mut s = 0.0;
            for k in 0..nv {
                s += (p.k1[row + k] - p.k3[row + k]) * fj[k] + p.k2[row + k] * fi[k];
            }
            out[p.i * nv + iv] += s;
        }
    }
    Ok(out)
}

//! Species parameters, phase grids, distribution fields, Maxwellians and moments.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub type Vec3 = [f64; 3];

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm2(a: &Vec3) -> f64 {
    dot(a, a)
}

/// Angular part b_ij of the collision kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngularLaw {
    /// b = scale / |S^{d-1}|.
    Constant,
    /// b = scale · |sinθ cosθ| / Z_d, normalized so that ∫ b dσ = scale.
    GradCutoff,
}

/// Surface measure of the unit sphere S^{d-1}.
pub fn sphere_measure(dim: usize) -> f64 {
    match dim {
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => panic!("unsupported dimension {dim}"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub masses: Vec<f64>,
    #[serde(default)]
    pub gamma: f64,
    pub phi_coeff: Vec<Vec<f64>>,
    #[serde(default = "default_law")]
    pub angular_law: AngularLaw,
    /// Per-pair total angular weight ∫ b_ij dσ.
    pub angular_scale: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    pub c_inf: Vec<f64>,
}

fn default_law() -> AngularLaw {
    AngularLaw::Constant
}

fn ones(n: usize) -> Vec<Vec<f64>> {
    vec![vec![1.0; n]; n]
}

impl MixtureSpec {
    /// Maxwellian molecules with unit coefficients.
    pub fn new(masses: Vec<f64>, c_inf: Vec<f64>) -> Result<Self> {
        let n = masses.len();
        let s = MixtureSpec {
            masses,
            gamma: 0.0,
            phi_coeff: ones(n),
            angular_law: AngularLaw::Constant,
            angular_scale: ones(n),
            delta: ones(n),
            c_inf,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.gamma = gamma;
        self.validate()?;
        Ok(self)
    }

    pub fn with_law(mut self, law: AngularLaw) -> Self {
        self.angular_law = law;
        self
    }

    pub fn with_phi(mut self, phi: Vec<Vec<f64>>) -> Result<Self> {
        self.phi_coeff = phi;
        self.validate()?;
        Ok(self)
    }

    pub fn with_delta(mut self, delta: Vec<Vec<f64>>) -> Result<Self> {
        self.delta = delta;
        self.validate()?;
        Ok(self)
    }

    pub fn n_species(&self) -> usize {
        self.masses.len()
    }

    pub fn min_mass(&self) -> f64 {
        self.masses.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn total_c_inf(&self) -> f64 {
        self.c_inf.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.masses.len();
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if n == 0 {
            return bad("at least one species required".into());
        }
        if self.c_inf.len() != n {
            return bad("c_inf length differs from species count".into());
        }
        if self.masses.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return bad("masses must be positive".into());
        }
        if self.c_inf.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return bad("c_inf must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma = {} outside [0, 1]", self.gamma));
        }
        for (name, m) in [
            ("phi_coeff", &self.phi_coeff),
            ("angular_scale", &self.angular_scale),
            ("delta", &self.delta),
        ] {
            if m.len() != n || m.iter().any(|r| r.len() != n) {
                return bad(format!("{name} must be {n}x{n}"));
            }
            for i in 0..n {
                for j in 0..n {
                    if !(m[i][j].is_finite() && m[i][j] > 0.0) {
                        return bad(format!("{name}[{i}][{j}] must be positive"));
                    }
                    if m[i][j] != m[j][i] {
                        return bad(format!("{name} must be symmetric"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Periodic 1-D spatial grid times a cell-centred Cartesian velocity lattice.
#[derive(Clone, Debug)]
pub struct PhaseGrid {
    dim: usize,
    nx: usize,
    lx: f64,
    nv: usize,
    v_max: f64,
    velocities: Vec<Vec3>,
}

impl PartialEq for PhaseGrid {
    fn eq(&self, o: &Self) -> bool {
        self.dim == o.dim && self.nx == o.nx && self.lx == o.lx && self.nv == o.nv && self.v_max == o.v_max
    }
}

impl PhaseGrid {
    pub fn new(dim: usize, nx: usize, lx: f64, nv: usize, v_max: f64) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidGrid(format!("dim = {dim} not in {{2, 3}}")));
        }
        if nv < 8 {
            return Err(Error::InvalidGrid(format!("nv = {nv} < 8")));
        }
        if nx == 0 || !(lx > 0.0) || !(v_max > 0.0) {
            return Err(Error::InvalidGrid("nx, lx and v_max must be positive".into()));
        }
        let h = 2.0 * v_max / nv as f64;
        let axis: Vec<f64> = (0..nv).map(|k| -v_max + (k as f64 + 0.5) * h).collect();
        let n_vel = nv.pow(dim as u32);
        let mut velocities = Vec::with_capacity(n_vel);
        for idx in 0..n_vel {
            let mut v = [0.0; 3];
            let mut r = idx;
            for a in (0..dim).rev() {
                v[a] = axis[r % nv];
                r /= nv;
            }
            velocities.push(v);
        }
        Ok(PhaseGrid { dim, nx, lx, nv, v_max, velocities })
    }

    /// Truncation radius with exp(-m_min v_max²/2) = 1e-10.
    pub fn default_v_max(spec: &MixtureSpec) -> f64 {
        (2.0 * 1e10f64.ln() / spec.min_mass()).sqrt()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn lx(&self) -> f64 {
        self.lx
    }
    pub fn nv(&self) -> usize {
        self.nv
    }
    pub fn v_max(&self) -> f64 {
        self.v_max
    }
    pub fn n_vel(&self) -> usize {
        self.velocities.len()
    }
    /// Velocity spacing.
    pub fn h(&self) -> f64 {
        2.0 * self.v_max / self.nv as f64
    }
    /// Velocity cell volume h^d.
    pub fn dv(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }
    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }
    pub fn x(&self, ix: usize) -> f64 {
        ix as f64 * self.dx()
    }
    pub fn velocity(&self, iv: usize) -> &Vec3 {
        &self.velocities[iv]
    }
    pub fn velocities(&self) -> &[Vec3] {
        &self.velocities
    }
    /// Lattice coordinate of velocity index along each axis.
    pub fn multi_index(&self, iv: usize) -> [usize; 3] {
        let mut out = [0; 3];
        let mut r = iv;
        for a in (0..self.dim).rev() {
            out[a] = r % self.nv;
            r /= self.nv;
        }
        out
    }
    pub fn flat_index(&self, k: [usize; 3]) -> usize {
        let mut idx = 0;
        for &ka in k.iter().take(self.dim) {
            idx = idx * self.nv + ka;
        }
        idx
    }
}

/// Values F_i(x, v), stored as ((species · nx) + x) · n_vel + v.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionField {
    n_species: usize,
    nx: usize,
    n_vel: usize,
    data: Vec<f64>,
}

impl DistributionField {
    pub fn zeros(n_species: usize, grid: &PhaseGrid) -> Self {
        DistributionField {
            n_species,
            nx: grid.nx(),
            n_vel: grid.n_vel(),
            data: vec![0.0; n_species * grid.nx() * grid.n_vel()],
        }
    }

    pub fn from_fn(n_species: usize, grid: &PhaseGrid, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut out = Self::zeros(n_species, grid);
        for s in 0..n_species {
            for x in 0..grid.nx() {
                for v in 0..grid.n_vel() {
                    out.data[(s * grid.nx() + x) * grid.n_vel() + v] = f(s, x, v);
                }
            }
        }
        out
    }

    pub fn n_species(&self) -> usize {
        self.n_species
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn n_vel(&self) -> usize {
        self.n_vel
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn idx(&self, s: usize, x: usize, v: usize) -> usize {
        (s * self.nx + x) * self.n_vel + v
    }
    #[inline]
    pub fn get(&self, s: usize, x: usize, v: usize) -> f64 {
        self.data[self.idx(s, x, v)]
    }
    #[inline]
    pub fn set(&mut self, s: usize, x: usize, v: usize, val: f64) {
        let i = self.idx(s, x, v);
        self.data[i] = val;
    }
    pub fn slice(&self, s: usize, x: usize) -> &[f64] {
        let a = (s * self.nx + x) * self.n_vel;
        &self.data[a..a + self.n_vel]
    }
    pub fn slice_mut(&mut self, s: usize, x: usize) -> &mut [f64] {
        let a = (s * self.nx + x) * self.n_vel;
        &mut self.data[a..a + self.n_vel]
    }

    /// Stacked species-velocity vector at one spatial point.
    pub fn point(&self, x: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_species * self.n_vel);
        for s in 0..self.n_species {
            out.extend_from_slice(self.slice(s, x));
        }
        out
    }

    pub fn set_point(&mut self, x: usize, values: &[f64]) {
        for s in 0..self.n_species {
            let nv = self.n_vel;
            self.slice_mut(s, x).copy_from_slice(&values[s * nv..(s + 1) * nv]);
        }
    }

    pub fn same_shape(&self, o: &Self) -> bool {
        self.n_species == o.n_species && self.nx == o.nx && self.n_vel == o.n_vel
    }

    pub fn axpy(&mut self, a: f64, o: &Self) {
        for (y, x) in self.data.iter_mut().zip(&o.data) {
            *y += a * x;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for y in &mut self.data {
            *y *= a;
        }
    }

    pub fn linear_combination(a: f64, f: &Self, b: f64, g: &Self) -> Self {
        let mut out = f.clone();
        for (y, x) in out.data.iter_mut().zip(&g.data) {
            *y = a * *y + b * x;
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// First (species, x, v) with a negative entry.
    pub fn first_negative(&self) -> Option<(usize, usize, usize)> {
        let pos = self.data.iter().position(|&v| v < 0.0)?;
        let v = pos % self.n_vel;
        let r = pos / self.n_vel;
        Some((r / self.nx, r % self.nx, v))
    }
}

/// Perturbative fluid split c_i = c_∞ + ε c̃_i, u_i = ū + ε ũ_i.
#[derive(Clone, Debug, PartialEq)]
pub struct FluidSplit {
    pub c_inf: Vec<f64>,
    pub c_tilde: Vec<Vec<f64>>,
    pub u_bar: Vec<Vec3>,
    pub u_tilde: Vec<Vec<Vec3>>,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacroField {
    pub c: Vec<Vec<f64>>,
    pub u: Vec<Vec<Vec3>>,
    pub theta: f64,
    pub split: Option<FluidSplit>,
}

impl MacroField {
    pub fn uniform(c: &[f64], u: &[Vec3], nx: usize) -> Self {
        MacroField {
            c: c.iter().map(|&ci| vec![ci; nx]).collect(),
            u: u.iter().map(|&ui| vec![ui; nx]).collect(),
            theta: 1.0,
            split: None,
        }
    }

    pub fn from_split(split: FluidSplit) -> Self {
        let n = split.c_inf.len();
        let nx = split.u_bar.len();
        let e = split.epsilon;
        let c = (0..n)
            .map(|i| (0..nx).map(|x| split.c_inf[i] + e * split.c_tilde[i][x]).collect())
            .collect();
        let u = (0..n)
            .map(|i| {
                (0..nx)
                    .map(|x| {
                        let ub = split.u_bar[x];
                        let ut = split.u_tilde[i][x];
                        [ub[0] + e * ut[0], ub[1] + e * ut[1], ub[2] + e * ut[2]]
                    })
                    .collect()
            })
            .collect();
        MacroField { c, u, theta: 1.0, split: Some(split) }
    }

    /// Largest relative mismatch between stored (c, u) and the reassembled split.
    pub fn split_residual(&self) -> f64 {
        let Some(s) = &self.split else { return 0.0 };
        let r = MacroField::from_split(s.clone());
        let mut worst: f64 = 0.0;
        for i in 0..self.c.len() {
            for x in 0..self.c[i].len() {
                let den = self.c[i][x].abs().max(1e-300);
                worst = worst.max((self.c[i][x] - r.c[i][x]).abs() / den);
                for a in 0..3 {
                    let den = self.u[i][x][a].abs().max(1.0);
                    worst = worst.max((self.u[i][x][a] - r.u[i][x][a]).abs() / den);
                }
            }
        }
        worst
    }

    pub fn nx(&self) -> usize {
        self.c.first().map_or(0, |c| c.len())
    }
}

/// c (m/2πθ)^{d/2} exp(-m|v - w|²/2θ).
#[inline]
pub fn maxwellian(dim: usize, m: f64, c: f64, shift: &Vec3, theta: f64, v: &Vec3) -> f64 {
    let d = [v[0] - shift[0], v[1] - shift[1], v[2] - shift[2]];
    c * (m / (2.0 * PI * theta)).powf(dim as f64 / 2.0) * (-m * norm2(&d) / (2.0 * theta)).exp()
}

/// Global equilibrium μ_i on the lattice, one row per species.
pub fn mu_table(spec: &MixtureSpec, grid: &PhaseGrid) -> Vec<Vec<f64>> {
    (0..spec.n_species())
        .map(|i| {
            grid.velocities()
                .iter()
                .map(|v| maxwellian(grid.dim(), spec.masses[i], spec.c_inf[i], &[0.0; 3], 1.0, v))
                .collect()
        })
        .collect()
}

pub fn global_maxwellian(spec: &MixtureSpec, grid: &PhaseGrid) -> DistributionField {
    let mu = mu_table(spec, grid);
    DistributionField::from_fn(spec.n_species(), grid, |s, _, v| mu[s][v])
}

pub fn local_maxwellian(
    spec: &MixtureSpec,
    grid: &PhaseGrid,
    mac: &MacroField,
    epsilon: f64,
) -> Result<DistributionField> {
    let n = spec.n_species();
    for i in 0..n {
        for x in 0..grid.nx() {
            if !(mac.c[i][x] > 0.0) {
                return Err(Error::NonPositiveDensity { species: i, x });
            }
        }
    }
    let mut out = DistributionField::zeros(n, grid);
    for i in 0..n {
        for x in 0..grid.nx() {
            let u = mac.u[i][x];
            let shift = [epsilon * u[0], epsilon * u[1], epsilon * u[2]];
            let c = mac.c[i][x];
            for (iv, v) in grid.velocities().iter().enumerate() {
                out.set(i, x, iv, maxwellian(grid.dim(), spec.masses[i], c, &shift, mac.theta, v));
            }
        }
    }
    Ok(out)
}

/// Velocity moments per spatial point.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    /// ∫ F_i dv.
    pub density: Vec<Vec<f64>>,
    /// ∫ v F_i dv.
    pub momentum: Vec<Vec<Vec3>>,
    /// Σ_i m_i ∫ v F_i dv.
    pub total_momentum: Vec<Vec3>,
    /// Σ_i m_i ∫ |v|²/2 F_i dv.
    pub total_energy: Vec<f64>,
    /// θ from (d/2) n θ = Σ_i m_i ∫ |v - u_mix|²/2 F_i dv.
    pub temperature: Vec<f64>,
}

impl Moments {
    /// Per-species densities and mean velocities as a MacroField with θ = 1.
    pub fn to_macro(&self) -> MacroField {
        let n = self.density.len();
        let nx = self.total_energy.len();
        let u = (0..n)
            .map(|i| {
                (0..nx)
                    .map(|x| {
                        let c = self.density[i][x];
                        let p = self.momentum[i][x];
                        [p[0] / c, p[1] / c, p[2] / c]
                    })
                    .collect()
            })
            .collect();
        MacroField { c: self.density.clone(), u, theta: 1.0, split: None }
    }
}

pub fn moments(spec: &MixtureSpec, grid: &PhaseGrid, f: &DistributionField) -> Moments {
    let n = spec.n_species();
    let nx = grid.nx();
    let dv = grid.dv();
    let dim = grid.dim();
    let mut density = vec![vec![0.0; nx]; n];
    let mut momentum = vec![vec![[0.0; 3]; nx]; n];
    let mut energy = vec![vec![0.0; nx]; n];
    for i in 0..n {
        for x in 0..nx {
            let row = f.slice(i, x);
            let (mut c, mut p, mut e) = (0.0, [0.0; 3], 0.0);
            for (val, v) in row.iter().zip(grid.velocities()) {
                c += val;
                for a in 0..dim {
                    p[a] += val * v[a];
                }
                e += val * norm2(v);
            }
            density[i][x] = c * dv;
            momentum[i][x] = [p[0] * dv, p[1] * dv, p[2] * dv];
            energy[i][x] = 0.5 * spec.masses[i] * e * dv;
        }
    }
    let mut total_momentum = vec![[0.0; 3]; nx];
    let mut total_energy = vec![0.0; nx];
    let mut temperature = vec![0.0; nx];
    for x in 0..nx {
        let mut rho = 0.0;
        let mut ntot = 0.0;
        for i in 0..n {
            for a in 0..3 {
                total_momentum[x][a] += spec.masses[i] * momentum[i][x][a];
            }
            total_energy[x] += energy[i][x];
            rho += spec.masses[i] * density[i][x];
            ntot += density[i][x];
        }
        let pm = total_momentum[x];
        let kinetic = 0.5 * norm2(&pm) / rho;
        temperature[x] = 2.0 * (total_energy[x] - kinetic) / (dim as f64 * ntot);
    }
    Moments { density, momentum, total_momentum, total_energy, temperature }
}

/// Weight of the weighted inner products.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weight {
    MuInv,
    MuInvBracketGamma,
}

/// Per-species lattice weights w_i(v) multiplied by h^d.
pub fn weight_table(spec: &MixtureSpec, grid: &PhaseGrid, weight: Weight) -> Vec<Vec<f64>> {
    let mu = mu_table(spec, grid);
    let dv = grid.dv();
    mu.iter()
        .map(|row| {
            row.iter()
                .zip(grid.velocities())
                .map(|(m, v)| {
                    let br = match weight {
                        Weight::MuInv => 1.0,
                        Weight::MuInvBracketGamma => (1.0 + norm2(v)).powf(spec.gamma / 2.0),
                    };
                    br * dv / m
                })
                .collect()
        })
        .collect()
}

pub fn weighted_inner_product(
    spec: &MixtureSpec,
    grid: &PhaseGrid,
    f: &DistributionField,
    g: &DistributionField,
    weight: Weight,
) -> f64 {
    let w = weight_table(spec, grid, weight);
    let dx = grid.dx();
    let mut total = 0.0;
    for i in 0..spec.n_species() {
        for x in 0..grid.nx() {
            let (a, b) = (f.slice(i, x), g.slice(i, x));
            let mut s = 0.0;
            for k in 0..a.len() {
                s += a[k] * b[k] * w[i][k];
            }
            total += s * dx;
        }
    }
    total
}

/// Inner product at one spatial point on stacked species-velocity vectors.
pub fn point_inner(w: &[Vec<f64>], a: &[f64], b: &[f64]) -> f64 {
    let nv = w[0].len();
    let mut s = 0.0;
    for (i, wi) in w.iter().enumerate() {
        for k in 0..nv {
            s += a[i * nv + k] * b[i * nv + k] * wi[k];
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_is_symmetric() {
        let g = PhaseGrid::new(2, 1, 1.0, 10, 5.0).unwrap();
        let n = g.n_vel();
        for iv in 0..n {
            let v = g.velocity(iv);
            let w = g.velocity(n - 1 - iv);
            assert_eq!(v[0], -w[0]);
            assert_eq!(v[1], -w[1]);
        }
        assert_eq!(g.flat_index(g.multi_index(37)), 37);
    }

    #[test]
    fn spec_validation_rejects_asymmetry() {
        let s = MixtureSpec::new(vec![1.0, 2.0], vec![1.0, 1.0]).unwrap();
        assert!(s.clone().with_delta(vec![vec![1.0, 2.0], vec![1.0, 1.0]]).is_err());
        assert!(s.with_gamma(1.5).is_err());
    }

    #[test]
    fn first_negative_locates_entry() {
        let g = PhaseGrid::new(2, 3, 1.0, 8, 5.0).unwrap();
        let mut f = DistributionField::zeros(2, &g);
        assert_eq!(f.first_negative(), None);
        f.set(1, 2, 5, -1.0);
        assert_eq!(f.first_negative(), Some((1, 2, 5)));
    }
}

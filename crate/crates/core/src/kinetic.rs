//! Time integration of ∂_t F + ε^{-1} v·∇_x F = ε^{-2} Q(F) on the 1-D torus,
//! in the full form and in the perturbed form F = M^ε + ε f driven by a
//! Maxwell-Stefan state.

use crate::collision::CollisionOperator;
use crate::error::{Error, Result};
use crate::linearized::{assemble_l_eps, nu_eps, pi_l, KernelBasis, DEFAULT_DENSE_LIMIT};
use crate::maxwell_stefan::{dt_macro, project_invariants, step_ms, MSState};
use crate::mixture::{
    global_maxwellian, local_maxwellian, maxwellian, mu_table, weighted_inner_product, DistributionField, MixtureSpec, PhaseGrid, Vec3, Weight,
};
use crate::numerics::Spectral1d;
use nalgebra::{DMatrix, DVector, LU};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ExplicitRk4,
    LieSplitImplicitL,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Formulation {
    #[serde(rename = "full_F")]
    FullF,
    #[serde(rename = "perturbed_f")]
    PerturbedF,
}

/// A fixed step or "auto".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DtSpec {
    Fixed(f64),
    Keyword(String),
}

impl Default for DtSpec {
    fn default() -> Self {
        DtSpec::Keyword("auto".into())
    }
}

fn default_cfl() -> f64 {
    0.5
}
fn default_refactor() -> usize {
    10
}
fn default_record() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub epsilon: f64,
    #[serde(default)]
    pub dt: DtSpec,
    pub t_end: f64,
    pub scheme: Scheme,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    pub formulation: Formulation,
    /// Steps between refactorizations of the implicit matrices.
    #[serde(default = "default_refactor")]
    pub refactor_every: usize,
    /// Steps between recorded samples.
    #[serde(default = "default_record")]
    pub record_every: usize,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!("epsilon {} outside (0, 1]", self.epsilon)));
        }
        if !(self.t_end >= 0.0) || !(self.cfl > 0.0) {
            return Err(Error::Config("t_end and cfl must be nonnegative and positive".into()));
        }
        match &self.dt {
            DtSpec::Fixed(v) if !(*v > 0.0) => return Err(Error::Config("dt must be positive".into())),
            DtSpec::Keyword(k) if k != "auto" => return Err(Error::Config(format!("dt keyword {k:?}"))),
            _ => {}
        }
        if self.scheme == Scheme::LieSplitImplicitL && self.formulation != Formulation::PerturbedF {
            return Err(Error::Config("lie_split_implicit_L requires perturbed_f".into()));
        }
        if self.refactor_every == 0 || self.record_every == 0 {
            return Err(Error::Config("refactor_every and record_every must be positive".into()));
        }
        Ok(())
    }
}

/// Exact advection F(x) -> F(x - v_x τ) of every velocity line, τ = dt/ε.
pub fn transport_apply(grid: &PhaseGrid, f: &DistributionField, dt_over_eps: f64) -> DistributionField {
    let sp = Spectral1d::new(grid.nx(), grid.lx());
    map_lines(grid, f, |line, v| sp.shift(line, v[0] * dt_over_eps))
}

/// -ε^{-1} v_x ∂_x F with spectral derivatives.
pub fn transport_rhs(grid: &PhaseGrid, f: &DistributionField, epsilon: f64) -> DistributionField {
    let sp = Spectral1d::new(grid.nx(), grid.lx());
    map_lines(grid, f, |line, v| sp.derivative(line).into_iter().map(|d| -v[0] * d / epsilon).collect())
}

pub(crate) fn map_lines(grid: &PhaseGrid, f: &DistributionField, op: impl Fn(&[f64], &Vec3) -> Vec<f64> + Sync) -> DistributionField {
    let n = f.n_species();
    let nx = f.nx();
    let nv = f.n_vel();
    let lines: Vec<Vec<f64>> = (0..n * nv)
        .into_par_iter()
        .map(|sv| {
            let (s, v) = (sv / nv, sv % nv);
            let line: Vec<f64> = (0..nx).map(|x| f.get(s, x, v)).collect();
            op(&line, grid.velocity(v))
        })
        .collect();
    let mut out = f.clone();
    for (sv, line) in lines.iter().enumerate() {
        let (s, v) = (sv / nv, sv % nv);
        for (x, val) in line.iter().enumerate() {
            out.set(s, x, v, *val);
        }
    }
    out
}

/// M^ε, ∂_t M^ε and ∂_x M^ε of a Maxwell-Stefan state.
#[derive(Clone, Debug)]
pub struct MaxwellianData {
    pub m: DistributionField,
    pub dt_m: DistributionField,
    pub dx_m: DistributionField,
    /// Reference drift ε ū(x) used for interpolation at each point.
    pub shifts: Vec<Vec3>,
}

pub fn maxwellian_data(spec: &MixtureSpec, grid: &PhaseGrid, ms: &MSState) -> Result<MaxwellianData> {
    check_ms_grid(grid, ms)?;
    let eps = ms.epsilon;
    let n = spec.n_species();
    let nx = grid.nx();
    let mac = ms.macro_field();
    let m = local_maxwellian(spec, grid, &mac, eps)?;
    let (dtc, dtu) = dt_macro(ms)?;
    let ub_dt = ms.u_bar_dt_grid();
    let sp = Spectral1d::new(nx, grid.lx());
    let mut dt_m = DistributionField::zeros(n, grid);
    let mut dx_m = DistributionField::zeros(n, grid);
    for i in 0..n {
        let dxc = sp.derivative(&mac.c[i]);
        let dxu: Vec<Vec<f64>> = (0..3).map(|a| sp.derivative(&mac.u[i].iter().map(|u| u[a]).collect::<Vec<_>>())).collect();
        for x in 0..nx {
            let c = mac.c[i][x];
            let u = mac.u[i][x];
            let dc_t = eps * dtc[i][x];
            let du_t = [ub_dt[x][0] + eps * dtu[i][x][0], ub_dt[x][1] + eps * dtu[i][x][1], ub_dt[x][2] + eps * dtu[i][x][2]];
            let du_x = [dxu[0][x], dxu[1][x], dxu[2][x]];
            let mi = spec.masses[i];
            for (iv, v) in grid.velocities().iter().enumerate() {
                let mv = m.get(i, x, iv);
                let rel = [v[0] - eps * u[0], v[1] - eps * u[1], v[2] - eps * u[2]];
                let proj_t = rel[0] * du_t[0] + rel[1] * du_t[1] + rel[2] * du_t[2];
                let proj_x = rel[0] * du_x[0] + rel[1] * du_x[1] + rel[2] * du_x[2];
                dt_m.set(i, x, iv, mv * (dc_t / c + mi * eps * proj_t));
                dx_m.set(i, x, iv, mv * (dxc[x] / c + mi * eps * proj_x));
            }
        }
    }
    let shifts = ms.u_bar_grid().iter().map(|u| [eps * u[0], eps * u[1], eps * u[2]]).collect();
    Ok(MaxwellianData { m, dt_m, dx_m, shifts })
}

fn check_ms_grid(grid: &PhaseGrid, ms: &MSState) -> Result<()> {
    if ms.nx() != grid.nx() || (ms.lx - grid.lx()).abs() > 1e-12 * grid.lx() {
        return Err(Error::GridMismatch("Maxwell-Stefan grid differs from phase grid".into()));
    }
    Ok(())
}

/// -ε^{-1} ∂_t M - ε^{-2} v_x ∂_x M.
fn maxwellian_drive(grid: &PhaseGrid, md: &MaxwellianData, eps: f64) -> DistributionField {
    let mut out = md.dt_m.clone();
    out.scale(-1.0 / eps);
    let nv = grid.n_vel();
    for (k, (o, d)) in out.data_mut().iter_mut().zip(md.dx_m.data()).enumerate() {
        *o -= grid.velocity(k % nv)[0] * d / (eps * eps);
    }
    out
}

/// S^ε with its split into π_L S^ε and the orthogonal remainder.
#[derive(Clone, Debug)]
pub struct SourceTerm {
    pub values: DistributionField,
    pub fluid: DistributionField,
    pub perp: DistributionField,
}

impl SourceTerm {
    pub fn norms(&self, spec: &MixtureSpec, grid: &PhaseGrid) -> (f64, f64) {
        let n = |f: &DistributionField| weighted_inner_product(spec, grid, f, f, Weight::MuInv).sqrt();
        (n(&self.fluid), n(&self.perp))
    }
}

/// S^ε = ε^{-3} Q(M^ε, M^ε) - ε^{-1} ∂_t M^ε - ε^{-2} v·∇_x M^ε.
pub fn source_term(op: &CollisionOperator, basis: &KernelBasis, ms: &MSState) -> Result<SourceTerm> {
    let grid = op.grid();
    let eps = ms.epsilon;
    let md = maxwellian_data(op.spec(), grid, ms)?;
    let mut values = op.q_full(&md.m, &md.shifts)?;
    values.scale(eps.powi(-3));
    values.axpy(1.0, &maxwellian_drive(grid, &md, eps));
    let fluid = pi_l(basis, &values);
    let perp = DistributionField::linear_combination(1.0, &values, -1.0, &fluid);
    Ok(SourceTerm { values, fluid, perp })
}

/// -ε^{-1} v·∇f + ε^{-2} L^ε f + ε^{-1} Q(f, f) + S^ε, evaluated as
/// ε^{-3} Q(M + εf) - ε^{-1} ∂_t M - ε^{-2} v·∇M - ε^{-1} v·∇f.
pub fn rhs_perturbed(op: &CollisionOperator, f: &DistributionField, ms: &MSState) -> Result<DistributionField> {
    let md = maxwellian_data(op.spec(), op.grid(), ms)?;
    rhs_perturbed_with(op, f, &md, ms.epsilon)
}

fn rhs_perturbed_with(op: &CollisionOperator, f: &DistributionField, md: &MaxwellianData, eps: f64) -> Result<DistributionField> {
    let grid = op.grid();
    let full = DistributionField::linear_combination(1.0, &md.m, eps, f);
    let mut out = op.q_full(&full, &md.shifts)?;
    out.scale(eps.powi(-3));
    out.axpy(1.0, &maxwellian_drive(grid, md, eps));
    out.axpy(1.0, &transport_rhs(grid, f, eps));
    Ok(out)
}

/// ε^{-2} Q(F) - ε^{-1} v·∇F.
pub fn rhs_full(op: &CollisionOperator, f: &DistributionField, eps: f64, shifts: &[Vec3]) -> Result<DistributionField> {
    let mut out = op.q_full(f, shifts)?;
    out.scale(eps.powi(-2));
    out.axpy(1.0, &transport_rhs(op.grid(), f, eps));
    Ok(out)
}

/// Snapshot handed to trajectory observers.
pub struct Sample<'a> {
    pub step: usize,
    pub t: f64,
    pub field: &'a DistributionField,
    pub ms: Option<&'a MSState>,
}

pub struct KineticSolver {
    pub op: CollisionOperator,
    pub basis: KernelBasis,
    pub config: SolverConfig,
    nu_max: f64,
    factors: Vec<LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    lagged: Vec<DMatrix<f64>>,
}

impl KineticSolver {
    pub fn new(op: CollisionOperator, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let spec = op.spec().clone();
        let grid = op.grid().clone();
        let basis = KernelBasis::new(&spec, &grid);
        let mu: Vec<f64> = mu_table(&spec, &grid).into_iter().flatten().collect();
        let nu_max = nu_eps(&op, &mu).into_iter().fold(0.0, f64::max);
        Ok(KineticSolver { op, basis, config, nu_max, factors: Vec::new(), lagged: Vec::new() })
    }

    pub fn grid(&self) -> &PhaseGrid {
        self.op.grid()
    }

    pub fn spec(&self) -> &MixtureSpec {
        self.op.spec()
    }

    pub fn nu_max(&self) -> f64 {
        self.nu_max
    }

    /// Resolved step: explicit schemes use min(cfl Δx ε/v_max, cfl ε²/ν_max), the
    /// split scheme only the transport bound.
    pub fn resolve_dt(&self) -> f64 {
        let g = self.grid();
        let eps = self.config.epsilon;
        let transport = if g.nx() > 1 { self.config.cfl * g.dx() * eps / g.v_max() } else { f64::INFINITY };
        match &self.config.dt {
            DtSpec::Fixed(v) => *v,
            DtSpec::Keyword(_) => match self.config.scheme {
                Scheme::ExplicitRk4 => transport.min(self.config.cfl * eps * eps / self.nu_max),
                Scheme::LieSplitImplicitL => transport.min(self.config.cfl * eps * eps),
            },
        }
    }

    fn check_explicit_dt(&self, dt: f64) -> Result<()> {
        if self.config.scheme != Scheme::ExplicitRk4 {
            return Ok(());
        }
        let eps = self.config.epsilon;
        // RK4 real-axis stability limit for the collision part.
        let bound = 2.5 * eps * eps / self.nu_max;
        if dt > bound {
            return Err(Error::CflViolation { dt, bound });
        }
        Ok(())
    }

    fn check_full_state(&self, f: &DistributionField) -> Result<()> {
        if !f.is_finite() {
            return Err(Error::NonFinite("full state".into()));
        }
        let scale = f.max_abs();
        for i in 0..f.n_species() {
            for x in 0..f.nx() {
                if f.slice(i, x).iter().any(|v| *v < -1e-10 * scale) {
                    return Err(Error::PositivityLoss { species: i, x });
                }
            }
        }
        Ok(())
    }

    /// One RK4 step of the full form with reference drifts `shifts(t)`.
    pub fn step_full(&self, f: &DistributionField, t: f64, dt: f64, shifts: &dyn Fn(f64) -> Vec<Vec3>) -> Result<DistributionField> {
        let eps = self.config.epsilon;
        let k1 = rhs_full(&self.op, f, eps, &shifts(t))?;
        let k2 = rhs_full(&self.op, &DistributionField::linear_combination(1.0, f, 0.5 * dt, &k1), eps, &shifts(t + 0.5 * dt))?;
        let k3 = rhs_full(&self.op, &DistributionField::linear_combination(1.0, f, 0.5 * dt, &k2), eps, &shifts(t + 0.5 * dt))?;
        let k4 = rhs_full(&self.op, &DistributionField::linear_combination(1.0, f, dt, &k3), eps, &shifts(t + dt))?;
        let mut out = f.clone();
        out.axpy(dt / 6.0, &k1);
        out.axpy(dt / 3.0, &k2);
        out.axpy(dt / 3.0, &k3);
        out.axpy(dt / 6.0, &k4);
        Ok(out)
    }

    /// One RK4 step of the perturbed form, integrating (f, c̃) jointly.
    pub fn step_perturbed_rk4(&self, f: &DistributionField, ms: &MSState, dt: f64) -> Result<(DistributionField, MSState)> {
        let eps = self.config.epsilon;
        let eval = |g: &DistributionField, s: &MSState| -> Result<(DistributionField, Vec<Vec<f64>>)> {
            let md = maxwellian_data(self.spec(), self.grid(), s)?;
            let (dtc, _) = dt_macro(s)?;
            Ok((rhs_perturbed_with(&self.op, g, &md, eps)?, dtc))
        };
        let comb = |c: &[Vec<f64>], k: &[Vec<f64>], a: f64| -> Vec<Vec<f64>> {
            c.iter().zip(k).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + a * q).collect()).collect()
        };
        let t = ms.t;
        let (k1, c1) = eval(f, ms)?;
        let s2 = ms.with_c_tilde(comb(&ms.c_tilde, &c1, 0.5 * dt), t + 0.5 * dt)?;
        let (k2, c2) = eval(&DistributionField::linear_combination(1.0, f, 0.5 * dt, &k1), &s2)?;
        let s3 = ms.with_c_tilde(comb(&ms.c_tilde, &c2, 0.5 * dt), t + 0.5 * dt)?;
        let (k3, c3) = eval(&DistributionField::linear_combination(1.0, f, 0.5 * dt, &k2), &s3)?;
        let s4 = ms.with_c_tilde(comb(&ms.c_tilde, &c3, dt), t + dt)?;
        let (k4, c4) = eval(&DistributionField::linear_combination(1.0, f, dt, &k3), &s4)?;
        let mut out = f.clone();
        out.axpy(dt / 6.0, &k1);
        out.axpy(dt / 3.0, &k2);
        out.axpy(dt / 3.0, &k3);
        out.axpy(dt / 6.0, &k4);
        let mut c: Vec<Vec<f64>> = (0..c1.len())
            .map(|i| {
                (0..c1[i].len())
                    .map(|x| ms.c_tilde[i][x] + dt / 6.0 * (c1[i][x] + 2.0 * c2[i][x] + 2.0 * c3[i][x] + c4[i][x]))
                    .collect()
            })
            .collect();
        project_invariants(&mut c);
        let next = ms.with_c_tilde(c, t + dt)?;
        Ok((out, next))
    }

    fn refactor(&mut self, ms: &MSState, md: &MaxwellianData, dt: f64) -> Result<()> {
        let eps = ms.epsilon;
        let tau = dt / (eps * eps);
        let nx = self.grid().nx();
        let op = &self.op;
        let mats: Vec<Result<DMatrix<f64>>> = (0..nx)
            .into_par_iter()
            .map(|x| Ok(assemble_l_eps(op, &md.m.point(x), &md.shifts[x], DEFAULT_DENSE_LIMIT)?.matrix))
            .collect();
        self.lagged.clear();
        self.factors.clear();
        for m in mats {
            let a = m?;
            let n = a.nrows();
            let sys = DMatrix::identity(n, n) - &a * tau;
            self.factors.push(sys.lu());
            self.lagged.push(a);
        }
        Ok(())
    }

    /// Lie splitting: exact transport, then (I - τA) f = f* + dt R(f*) - τ A f*
    /// with τ = dt/ε² and A the lagged L^ε.
    pub fn step_perturbed_split(
        &mut self,
        f: &DistributionField,
        ms: &MSState,
        dt: f64,
        step: usize,
    ) -> Result<(DistributionField, MSState)> {
        let eps = self.config.epsilon;
        let tau = dt / (eps * eps);
        let grid = self.grid().clone();
        let md = maxwellian_data(self.spec(), &grid, ms)?;
        if step % self.config.refactor_every == 0 || self.factors.is_empty() {
            self.refactor(ms, &md, dt)?;
        }
        let fs = transport_apply(&grid, f, dt / eps);
        let full = DistributionField::linear_combination(1.0, &md.m, eps, &fs);
        let mut r = self.op.q_full(&full, &md.shifts)?;
        r.scale(eps.powi(-3));
        r.axpy(1.0, &maxwellian_drive(&grid, &md, eps));
        let nx = grid.nx();
        let lagged = &self.lagged;
        let factors = &self.factors;
        let sols: Vec<Result<Vec<f64>>> = (0..nx)
            .into_par_iter()
            .map(|x| {
                let fp = DVector::from_vec(fs.point(x));
                let rp = DVector::from_vec(r.point(x));
                let rhs = &fp + rp * dt - (&lagged[x] * &fp) * tau;
                let sol = factors[x].solve(&rhs).ok_or(Error::NonFinite(format!("implicit solve at x index {x}")))?;
                Ok(sol.iter().cloned().collect())
            })
            .collect();
        let mut out = fs;
        for (x, s) in sols.into_iter().enumerate() {
            out.set_point(x, &s?);
        }
        let next = step_ms(ms, dt)?;
        Ok((out, next))
    }

    /// Runs the full form from `f0`; `shifts(t)` gives the reference drifts.
    pub fn run_full(
        &self,
        f0: &DistributionField,
        shifts: &dyn Fn(f64) -> Vec<Vec3>,
        observer: &mut dyn FnMut(&Sample) -> Result<()>,
    ) -> Result<DistributionField> {
        self.op.check_field(f0)?;
        let dt = self.resolve_dt();
        self.check_explicit_dt(dt)?;
        let (steps, h) = step_plan(self.config.t_end, dt);
        let mut f = f0.clone();
        observer(&Sample { step: 0, t: 0.0, field: &f, ms: None })?;
        for k in 0..steps {
            let t = k as f64 * h;
            f = self.step_full(&f, t, h, shifts)?;
            self.check_full_state(&f)?;
            if (k + 1) % self.config.record_every == 0 || k + 1 == steps {
                observer(&Sample { step: k + 1, t: (k + 1) as f64 * h, field: &f, ms: None })?;
            }
        }
        Ok(f)
    }

    /// Runs the perturbed form from (f0, ms0).
    pub fn run_perturbed(
        &mut self,
        f0: &DistributionField,
        ms0: &MSState,
        observer: &mut dyn FnMut(&Sample) -> Result<()>,
    ) -> Result<(DistributionField, MSState)> {
        self.op.check_field(f0)?;
        check_ms_grid(self.grid(), ms0)?;
        if (ms0.epsilon - self.config.epsilon).abs() > 0.0 {
            return Err(Error::Config("Maxwell-Stefan epsilon differs from solver epsilon".into()));
        }
        let dt = self.resolve_dt();
        self.check_explicit_dt(dt)?;
        let (steps, h) = step_plan(self.config.t_end, dt);
        self.factors.clear();
        let mut f = f0.clone();
        let mut ms = ms0.clone();
        observer(&Sample { step: 0, t: ms.t, field: &f, ms: Some(&ms) })?;
        for k in 0..steps {
            let (nf, nms) = match self.config.scheme {
                Scheme::ExplicitRk4 => self.step_perturbed_rk4(&f, &ms, h)?,
                Scheme::LieSplitImplicitL => self.step_perturbed_split(&f, &ms, h, k)?,
            };
            f = nf;
            ms = nms;
            if !f.is_finite() {
                return Err(Error::NonFinite("perturbation".into()));
            }
            if (k + 1) % self.config.record_every == 0 || k + 1 == steps {
                observer(&Sample { step: k + 1, t: ms.t, field: &f, ms: Some(&ms) })?;
            }
        }
        Ok((f, ms))
    }
}

/// Number of equal steps of size ≤ dt reaching t_end.
pub fn step_plan(t_end: f64, dt: f64) -> (usize, f64) {
    if t_end <= 0.0 {
        return (0, 0.0);
    }
    let steps = (t_end / dt - 1e-9).ceil().max(1.0) as usize;
    (steps, t_end / steps as f64)
}

/// Per species, two Maxwellians drifting at ±u0 e_1 with temperature
/// 1 - m_i u0²/d, so that mass, momentum and energy equal those of μ.
pub fn counterstream_start(spec: &MixtureSpec, grid: &PhaseGrid, u0: f64) -> Result<DistributionField> {
    let d = grid.dim() as f64;
    let mut thetas = Vec::new();
    for (i, m) in spec.masses.iter().enumerate() {
        let th = 1.0 - m * u0 * u0 / d;
        if !(th > 0.0) {
            return Err(Error::Config(format!("drift {u0} leaves no thermal energy for species {i}")));
        }
        thetas.push(th);
    }
    Ok(DistributionField::from_fn(spec.n_species(), grid, |s, _, iv| {
        let v = grid.velocity(iv);
        let (m, c) = (spec.masses[s], spec.c_inf[s]);
        0.5 * (maxwellian(grid.dim(), m, c, &[u0, 0.0, 0.0], thetas[s], v)
            + maxwellian(grid.dim(), m, c, &[-u0, 0.0, 0.0], thetas[s], v))
    }))
}

/// One row of a relaxation history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RelaxRecord {
    pub t: f64,
    /// Σ ∫∫ F ln F.
    pub h: f64,
    /// Entropy dissipation -Σ ∫∫ Q(F) ln F.
    pub d: f64,
    /// ‖F - μ‖ in the μ^{-1} metric.
    pub dist: f64,
}

/// Space-homogeneous relaxation of the full form with zero reference drift;
/// `on_record` sees each record as it is produced.
pub fn relaxation(
    solver: &KineticSolver,
    f0: &DistributionField,
    on_record: &mut dyn FnMut(&RelaxRecord) -> Result<()>,
) -> Result<Vec<RelaxRecord>> {
    let spec = solver.spec().clone();
    let grid = solver.grid().clone();
    let mu = global_maxwellian(&spec, &grid);
    let zero = vec![[0.0; 3]; grid.nx()];
    let mut out = Vec::new();
    let mut obs = |s: &Sample| -> Result<()> {
        let (h, d) = solver.op.entropy_and_dissipation(s.field, &zero)?;
        let diff = DistributionField::linear_combination(1.0, s.field, -1.0, &mu);
        let dist = weighted_inner_product(&spec, &grid, &diff, &diff, Weight::MuInv).sqrt();
        let rec = RelaxRecord { t: s.t, h, d, dist };
        on_record(&rec)?;
        out.push(rec);
        Ok(())
    };
    let shifts = |_t: f64| vec![[0.0; 3]; grid.nx()];
    solver.run_full(f0, &shifts, &mut obs)?;
    Ok(out)
}

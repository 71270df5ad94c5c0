//! Hypocoercive H^s_ε functional on the 1-D torus, its comparison with the
//! plain anisotropic Sobolev norm, a Poincaré-type check for π_L, and the
//! ε-sweeps behind the stability and source-term scalings.
//!
//! Only x_1 varies on the grid, so ∂^α_x reduces to ∂_{x_1}^α and the cross
//! term pairs ∂_{x_1}^α f with ∂_{v_1} ∂_{x_1}^{α-1} f.

use crate::collision::CollisionOperator;
use crate::error::{Error, Result};
use crate::kinetic::{map_lines, source_term, DtSpec, Formulation, KineticSolver, Scheme, SolverConfig};
use crate::linearized::{pi_l, pi_teps, random_smooth_point, KernelBasis};
use crate::maxwell_stefan::{MSState, UBarProfile};
use crate::mixture::{mu_table, point_inner, weight_table, DistributionField, MixtureSpec, PhaseGrid, Weight};
use crate::numerics::{linear_fit, seeded_rng, LinearFit, Spectral1d};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Highest Sobolev order supported by the composed difference stencils.
pub const MAX_ORDER: usize = 3;

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn order_one() -> usize {
    1
}

/// Coefficients of the H^s_ε functional; a, b, d are shared by all multi-indices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypNormConfig {
    #[serde(default = "order_one")]
    pub s: usize,
    #[serde(default = "one")]
    pub a: f64,
    #[serde(default = "half")]
    pub b: f64,
    #[serde(default = "one")]
    pub d: f64,
    #[serde(default = "one")]
    pub epsilon: f64,
}

impl Default for HypNormConfig {
    fn default() -> Self {
        HypNormConfig { s: 1, a: 1.0, b: 0.5, d: 1.0, epsilon: 1.0 }
    }
}

impl HypNormConfig {
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    /// Range checks; the discriminant is checked by [`HypNormConfig::is_admissible`].
    pub fn validate(&self) -> Result<()> {
        if self.s == 0 || self.s > MAX_ORDER {
            return Err(Error::DimensionOverflow { order: self.s, budget: MAX_ORDER });
        }
        if !(self.a > 0.0 && self.b >= 0.0 && self.d > 0.0) || !self.a.is_finite() || !self.b.is_finite() || !self.d.is_finite() {
            return Err(Error::Config("a and d must be positive, b nonnegative, all finite".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!("epsilon {} outside (0, 1]", self.epsilon)));
        }
        Ok(())
    }

    /// b² < 4ad.
    pub fn is_admissible(&self) -> bool {
        self.b * self.b < 4.0 * self.a * self.d
    }
}

/// ∂_{x_1} of every velocity line, spectrally.
pub fn spatial_derivative(grid: &PhaseGrid, f: &DistributionField) -> DistributionField {
    let sp = Spectral1d::new(grid.nx(), grid.lx());
    map_lines(grid, f, |line, _| sp.derivative(line))
}

/// ∂_{v_axis} f = μ_i (∂_{v_axis} h - m_i v_axis h) with h = f/μ_i, the
/// derivative of h by fourth-order central differences, zero beyond the lattice.
pub fn velocity_derivative(spec: &MixtureSpec, grid: &PhaseGrid, f: &DistributionField, axis: usize) -> DistributionField {
    let mu = mu_table(spec, grid);
    let nv = grid.nv() as isize;
    let h = grid.h();
    let mut out = DistributionField::zeros(f.n_species(), grid);
    for s in 0..f.n_species() {
        let m = spec.masses[s];
        let mus = &mu[s];
        for x in 0..f.nx() {
            let src: Vec<f64> = f.slice(s, x).iter().zip(mus).map(|(a, b)| a / b).collect();
            let dst = out.slice_mut(s, x);
            for (iv, o) in dst.iter_mut().enumerate() {
                let k = grid.multi_index(iv);
                let at = |off: isize| -> f64 {
                    let p = k[axis] as isize + off;
                    if p < 0 || p >= nv {
                        return 0.0;
                    }
                    let mut kk = k;
                    kk[axis] = p as usize;
                    src[grid.flat_index(kk)]
                };
                let dh = (at(-2) - 8.0 * at(-1) + 8.0 * at(1) - at(2)) / (12.0 * h);
                *o = mus[iv] * (dh - m * grid.velocity(iv)[axis] * src[iv]);
            }
        }
    }
    out
}

/// Multi-indices β ∈ ℕ^dim with |β| = order.
fn multi_indices(dim: usize, order: usize) -> Vec<Vec<usize>> {
    if dim == 1 {
        return vec![vec![order]];
    }
    let mut out = Vec::new();
    for first in (0..=order).rev() {
        for mut rest in multi_indices(dim - 1, order - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// The ε-free pieces of both norms for one field.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormComponents {
    /// ‖∂^α_x f‖², α = 0..=s.
    pub x: Vec<f64>,
    /// ⟨∂^α_x f, ∂_{v_1} ∂^{α-1}_x f⟩, α = 1..=s.
    pub cross: Vec<f64>,
    /// Σ_{α+|β|≤s, |β|≥1} ‖∂^β_v ∂^α_x f‖².
    pub v: f64,
}

impl NormComponents {
    pub fn hyp_sq(&self, c: &HypNormConfig) -> f64 {
        let e = c.epsilon;
        c.a * self.x.iter().sum::<f64>() + e * c.b * self.cross.iter().sum::<f64>() + e * e * c.d * self.v
    }

    /// ‖f‖² + Σ‖∂^α_x f‖² + ε² Σ‖∂^β_v ∂^α_x f‖².
    pub fn plain_sq(&self, epsilon: f64) -> f64 {
        self.x[0] + self.x.iter().sum::<f64>() + epsilon * epsilon * self.v
    }
}

struct Metric {
    w: Vec<Vec<f64>>,
    dx: f64,
}

impl Metric {
    fn new(spec: &MixtureSpec, grid: &PhaseGrid) -> Self {
        Metric { w: weight_table(spec, grid, Weight::MuInv), dx: grid.dx() }
    }

    fn inner(&self, f: &DistributionField, g: &DistributionField) -> f64 {
        let mut total = 0.0;
        for (i, wi) in self.w.iter().enumerate() {
            for x in 0..f.nx() {
                let (a, b) = (f.slice(i, x), g.slice(i, x));
                total += a.iter().zip(b).zip(wi).map(|((p, q), w)| p * q * w).sum::<f64>() * self.dx;
            }
        }
        total
    }
}

fn check_shape(spec: &MixtureSpec, grid: &PhaseGrid, f: &DistributionField) -> Result<()> {
    if f.n_species() != spec.n_species() || f.nx() != grid.nx() || f.n_vel() != grid.n_vel() {
        return Err(Error::GridMismatch("field shape differs from grid".into()));
    }
    Ok(())
}

pub fn norm_components(spec: &MixtureSpec, grid: &PhaseGrid, f: &DistributionField, s: usize) -> Result<NormComponents> {
    if s == 0 || s > MAX_ORDER {
        return Err(Error::DimensionOverflow { order: s, budget: MAX_ORDER });
    }
    check_shape(spec, grid, f)?;
    let metric = Metric::new(spec, grid);
    let mut xd = vec![f.clone()];
    for k in 0..s {
        let next = spatial_derivative(grid, &xd[k]);
        xd.push(next);
    }
    let x: Vec<f64> = xd.iter().map(|g| metric.inner(g, g)).collect();
    let cross: Vec<f64> = (1..=s).map(|a| metric.inner(&xd[a], &velocity_derivative(spec, grid, &xd[a - 1], 0))).collect();
    let mut v = 0.0;
    for order in 1..=s {
        for beta in multi_indices(grid.dim(), order) {
            for g in xd.iter().take(s - order + 1) {
                let mut h = g.clone();
                for (axis, &times) in beta.iter().enumerate() {
                    for _ in 0..times {
                        h = velocity_derivative(spec, grid, &h, axis);
                    }
                }
                v += metric.inner(&h, &h);
            }
        }
    }
    Ok(NormComponents { x, cross, v })
}

/// ‖f‖_{H^s_ε}; `IndefiniteForm` when the quadratic form is negative.
pub fn hyp_norm(spec: &MixtureSpec, grid: &PhaseGrid, f: &DistributionField, config: &HypNormConfig) -> Result<f64> {
    config.validate()?;
    let q = norm_components(spec, grid, f, config.s)?.hyp_sq(config);
    if q < 0.0 {
        return Err(Error::IndefiniteForm(format!("value {q:e} with a = {}, b = {}, d = {}", config.a, config.b, config.d)));
    }
    Ok(q.sqrt())
}

pub fn plain_norm(spec: &MixtureSpec, grid: &PhaseGrid, f: &DistributionField, s: usize, epsilon: f64) -> Result<f64> {
    Ok(norm_components(spec, grid, f, s)?.plain_sq(epsilon).sqrt())
}

/// Σ_k Σ_{cos, sin} μ_i p_{k,i}(v) trig(2πkx/L) with random cubic p and k ≤ `max_mode`.
pub fn random_test_field(spec: &MixtureSpec, grid: &PhaseGrid, max_mode: usize, rng: &mut impl Rng) -> DistributionField {
    let n = spec.n_species();
    let nv = grid.n_vel();
    let mut out = DistributionField::zeros(n, grid);
    for k in 0..=max_mode {
        for phase in 0..2 {
            if k == 0 && phase == 1 {
                continue;
            }
            let shape = random_smooth_point(spec, grid, 3, rng);
            for x in 0..grid.nx() {
                let arg = 2.0 * PI * k as f64 * x as f64 / grid.nx() as f64;
                let t = if phase == 0 { arg.cos() } else { arg.sin() };
                for s in 0..n {
                    let dst = out.slice_mut(s, x);
                    for (iv, o) in dst.iter_mut().enumerate() {
                        *o += t * shape[s * nv + iv];
                    }
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EquivalenceRow {
    pub epsilon: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

/// Extremes of ‖f‖_{H^s_ε} / plain norm per ε over a fixed family of fields.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub rows: Vec<EquivalenceRow>,
    /// Smallest and largest ratio over all ε.
    pub interval: (f64, f64),
    /// max_ε / min_ε - 1 of the per-ε lower endpoints.
    pub lower_drift: f64,
    /// Same for the upper endpoints.
    pub upper_drift: f64,
}

impl EquivalenceReport {
    pub fn drift(&self) -> f64 {
        self.lower_drift.max(self.upper_drift)
    }
}

pub fn equivalence_ratios(
    spec: &MixtureSpec,
    grid: &PhaseGrid,
    fields: &[DistributionField],
    coeffs: &HypNormConfig,
    eps_list: &[f64],
) -> Result<EquivalenceReport> {
    if fields.is_empty() || eps_list.is_empty() {
        return Err(Error::Config("equivalence needs fields and epsilons".into()));
    }
    let comps: Vec<NormComponents> = fields.iter().map(|f| norm_components(spec, grid, f, coeffs.s)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for &e in eps_list {
        let cfg = coeffs.with_epsilon(e);
        cfg.validate()?;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in &comps {
            let q = c.hyp_sq(&cfg);
            if q < 0.0 {
                return Err(Error::IndefiniteForm(format!("value {q:e} at epsilon {e}")));
            }
            let r = (q / c.plain_sq(e)).sqrt();
            lo = lo.min(r);
            hi = hi.max(r);
        }
        rows.push(EquivalenceRow { epsilon: e, min_ratio: lo, max_ratio: hi });
    }
    let spread = |get: fn(&EquivalenceRow) -> f64| {
        let (a, b) = rows.iter().map(get).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        b / a - 1.0
    };
    let lower_drift = spread(|r| r.min_ratio);
    let upper_drift = spread(|r| r.max_ratio);
    let interval = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.min_ratio), b.max(r.max_ratio)));
    Ok(EquivalenceReport { rows, interval, lower_drift, upper_drift })
}

/// ‖π_L f‖² ≤ 2 C_T ‖∇_x f‖² + δ² C^T on one field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PoincareReport {
    pub pi_l_sq: f64,
    pub grad_sq: f64,
    /// (L / 2π)², the inverse square of the lowest nonzero wavenumber.
    pub torus_constant: f64,
    /// ‖π_{T^ε} f‖² with π_{T^ε} f viewed as an x-constant field.
    pub pi_t_sq: f64,
    pub c_t: f64,
    pub residual: f64,
    pub holds: bool,
}

/// With `c_t = None` the constant is fitted as 2‖π_{T^ε} f‖² / δ², the
/// offset produced by splitting π_L f into its mean and fluctuation.
pub fn poincare_check(
    spec: &MixtureSpec,
    grid: &PhaseGrid,
    basis: &KernelBasis,
    f: &DistributionField,
    delta_ms: f64,
    c_t: Option<f64>,
) -> Result<PoincareReport> {
    check_shape(spec, grid, f)?;
    let metric = Metric::new(spec, grid);
    let p = pi_l(basis, f);
    let pi_l_sq = metric.inner(&p, &p);
    let g = spatial_derivative(grid, f);
    let grad_sq = metric.inner(&g, &g);
    let torus_constant = (grid.lx() / (2.0 * PI)).powi(2);
    let avg = pi_teps(basis, f);
    let pi_t_sq = basis.inner(&avg, &avg) * grid.lx();
    let offset = match c_t {
        Some(c) => delta_ms * delta_ms * c,
        None => 2.0 * pi_t_sq,
    };
    let c_t = match c_t {
        Some(c) => c,
        None if delta_ms > 0.0 => 2.0 * pi_t_sq / (delta_ms * delta_ms),
        None => 0.0,
    };
    let residual = pi_l_sq - 2.0 * torus_constant * grad_sq - offset;
    let scale = pi_l_sq.max(grad_sq).max(f64::MIN_POSITIVE);
    Ok(PoincareReport { pi_l_sq, grad_sq, torus_constant, pi_t_sq, c_t, residual, holds: residual <= 1e-12 * scale })
}

/// |π_{T^ε}(f) - π_{T^ε}(f^in) + ε^{-1} π_{T^ε}(M^ε - M^{ε,in})| in the μ^{-1} metric.
pub fn initial_identity_residual(
    basis: &KernelBasis,
    f: &DistributionField,
    f_in: &DistributionField,
    m: &DistributionField,
    m_in: &DistributionField,
    epsilon: f64,
) -> f64 {
    let a = pi_teps(basis, f);
    let b = pi_teps(basis, f_in);
    let c = pi_teps(basis, m);
    let d = pi_teps(basis, m_in);
    let r: Vec<f64> = (0..a.len()).map(|k| a[k] - b[k] + (c[k] - d[k]) / epsilon).collect();
    basis.inner(&r, &r).sqrt()
}

fn default_mode() -> usize {
    1
}
fn default_degree() -> usize {
    3
}

/// Maxwell-Stefan data c̃_i = a_i cos(2πkx/L), ū, initial time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MsSetup {
    pub amplitudes: Vec<f64>,
    #[serde(default = "default_mode")]
    pub mode: usize,
    #[serde(default)]
    pub u_bar: UBarProfile,
    #[serde(default)]
    pub t0: f64,
}

impl MsSetup {
    pub fn state(&self, spec: &MixtureSpec, grid: &PhaseGrid, epsilon: f64) -> Result<MSState> {
        let mut ms = MSState::sinusoidal(spec, grid.lx(), grid.nx(), &self.amplitudes, self.mode, self.u_bar, epsilon)?;
        ms.t = self.t0;
        Ok(ms)
    }
}

/// f^in = A (I - π_L)(μ p) cos(2πkx/L) + κ φ, with p a seeded random
/// polynomial normalized to unit pointwise norm and φ the normalized
/// sum of the kernel basis (x-constant, so ‖π_{T^ε} f^in‖ ∝ κ).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialData {
    pub amplitude: f64,
    #[serde(default = "default_mode")]
    pub mode: usize,
    #[serde(default)]
    pub kernel_amplitude: f64,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData { amplitude: 0.1, mode: 1, kernel_amplitude: 0.0, degree: 3, seed: 0 }
    }
}

pub fn initial_perturbation(spec: &MixtureSpec, grid: &PhaseGrid, basis: &KernelBasis, init: &InitialData) -> DistributionField {
    let mut rng = seeded_rng(init.seed);
    let raw = random_smooth_point(spec, grid, init.degree, &mut rng);
    let proj = basis.project(&raw);
    let mut micro: Vec<f64> = raw.iter().zip(&proj).map(|(a, b)| a - b).collect();
    let nm = basis.inner(&micro, &micro).sqrt();
    if nm > 0.0 {
        micro.iter_mut().for_each(|v| *v /= nm);
    }
    let mut kern = vec![0.0; raw.len()];
    for phi in &basis.vectors {
        kern.iter_mut().zip(phi).for_each(|(k, p)| *k += p);
    }
    let nk = basis.inner(&kern, &kern).sqrt();
    let nv = grid.n_vel();
    DistributionField::from_fn(spec.n_species(), grid, |s, x, iv| {
        let c = (2.0 * PI * init.mode as f64 * x as f64 / grid.nx() as f64).cos();
        init.amplitude * c * micro[s * nv + iv] + init.kernel_amplitude * kern[s * nv + iv] / nk
    })
}

fn default_scheme() -> Scheme {
    Scheme::LieSplitImplicitL
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

/// Solver settings shared by every ε of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSolver {
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default)]
    pub dt: DtSpec,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    pub t_end: f64,
    #[serde(default = "default_refactor")]
    pub refactor_every: usize,
    #[serde(default = "default_record")]
    pub record_every: usize,
}

impl SweepSolver {
    pub fn config(&self, epsilon: f64) -> SolverConfig {
        SolverConfig {
            epsilon,
            dt: self.dt.clone(),
            t_end: self.t_end,
            scheme: self.scheme,
            cfl: self.cfl,
            formulation: Formulation::PerturbedF,
            refactor_every: self.refactor_every,
            record_every: self.record_every,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityRow {
    pub epsilon: f64,
    pub dt: f64,
    pub steps: usize,
    /// sup_t ‖f‖_{H^s_ε}.
    pub sup_f: f64,
    /// sup_t ‖F^ε - M^ε‖_{H^s_ε} = ε sup_t ‖f‖_{H^s_ε}.
    pub sup_metric: f64,
    pub final_f: f64,
    /// Recorded (t, ‖f‖_{H^s_ε}).
    pub history: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityTable {
    pub rows: Vec<StabilityRow>,
    /// log sup_metric against log ε.
    pub fit: LinearFit,
    /// max_ε sup_t ‖f‖_{H^s_ε}.
    pub delta_b: f64,
}

/// One perturbed run per ε from the same f^in; ε values run in parallel.
pub fn stability_sweep(
    op: &CollisionOperator,
    eps_list: &[f64],
    ms: &MsSetup,
    init: &InitialData,
    solver: &SweepSolver,
    hyp: &HypNormConfig,
) -> Result<StabilityTable> {
    if eps_list.len() < 2 {
        return Err(Error::Config("a sweep needs at least two epsilons".into()));
    }
    hyp.validate()?;
    let spec = op.spec().clone();
    let grid = op.grid().clone();
    let basis = KernelBasis::new(&spec, &grid);
    let f0 = initial_perturbation(&spec, &grid, &basis, init);
    let rows: Vec<Result<StabilityRow>> = eps_list
        .par_iter()
        .map(|&eps| {
            let cfg = hyp.with_epsilon(eps);
            let mut solver = KineticSolver::new(op.clone(), solver.config(eps))?;
            let dt = solver.resolve_dt();
            let ms0 = ms.state(&spec, &grid, eps)?;
            let mut sup = 0.0f64;
            let mut last = 0.0;
            let mut steps = 0;
            let mut history = Vec::new();
            let mut obs = |s: &crate::kinetic::Sample| -> Result<()> {
                last = hyp_norm(&spec, &grid, s.field, &cfg)?;
                sup = sup.max(last);
                steps = s.step;
                history.push((s.t, last));
                Ok(())
            };
            solver.run_perturbed(&f0, &ms0, &mut obs)?;
            Ok(StabilityRow { epsilon: eps, dt, steps, sup_f: sup, sup_metric: eps * sup, final_f: last, history })
        })
        .collect();
    let rows: Vec<StabilityRow> = rows.into_iter().collect::<Result<_>>()?;
    let lx: Vec<f64> = rows.iter().map(|r| r.epsilon.ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.sup_metric.ln()).collect();
    let fit = linear_fit(&lx, &ly);
    let delta_b = rows.iter().fold(0.0f64, |m, r| m.max(r.sup_f));
    Ok(StabilityTable { rows, fit, delta_b })
}

/// Absolute part of the noise floor of [`source_scaling_probe`].
pub const SCALING_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SourceScalingRow {
    pub epsilon: f64,
    /// ‖π_L ∂^α_x S^ε‖ for |α| = 0, 1.
    pub fluid: [f64; 2],
    /// ‖∂^α_x S^ε⊥‖ for |α| = 0, 1.
    pub perp: [f64; 2],
    /// max(SCALING_FLOOR, 2 ε^{-3} ‖Q_h(μ, μ)‖): the lattice defect of the
    /// global equilibrium, which is all a uniform state produces.
    pub floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SourceScalingReport {
    pub rows: Vec<SourceScalingRow>,
    /// None when every norm of the series is at or below its row's floor.
    pub fluid_fit: [Option<LinearFit>; 2],
    pub perp_fit: [Option<LinearFit>; 2],
}

pub fn source_scaling_probe(op: &CollisionOperator, eps_list: &[f64], ms: &MsSetup) -> Result<SourceScalingReport> {
    if eps_list.len() < 2 {
        return Err(Error::Config("a sweep needs at least two epsilons".into()));
    }
    let spec = op.spec();
    let grid = op.grid();
    let basis = KernelBasis::new(spec, grid);
    let metric = Metric::new(spec, grid);
    let mu: Vec<f64> = op.mu().iter().flatten().cloned().collect();
    let q = op.q_point(&mu, &mu, &[0.0; 3]);
    let w = weight_table(spec, grid, Weight::MuInv);
    let defect = (point_inner(&w, &q, &q) * grid.lx()).sqrt();
    let mut rows = Vec::new();
    for &eps in eps_list {
        let state = ms.state(spec, grid, eps)?;
        let st = source_term(op, &basis, &state)?;
        let dfl = spatial_derivative(grid, &st.fluid);
        let dpe = spatial_derivative(grid, &st.perp);
        let n = |f: &DistributionField| metric.inner(f, f).sqrt();
        let floor = SCALING_FLOOR.max(2.0 * defect / eps.powi(3));
        rows.push(SourceScalingRow { epsilon: eps, fluid: [n(&st.fluid), n(&dfl)], perp: [n(&st.perp), n(&dpe)], floor });
    }
    let fit = |get: &dyn Fn(&SourceScalingRow) -> f64| -> Option<LinearFit> {
        if rows.iter().all(|r| get(r) <= r.floor) {
            return None;
        }
        let x: Vec<f64> = rows.iter().map(|r| r.epsilon.ln()).collect();
        let y: Vec<f64> = rows.iter().map(|r| get(r).max(f64::MIN_POSITIVE).ln()).collect();
        Some(linear_fit(&x, &y))
    };
    let fluid_fit = [fit(&|r| r.fluid[0]), fit(&|r| r.fluid[1])];
    let perp_fit = [fit(&|r| r.perp[0]), fit(&|r| r.perp[1])];
    Ok(SourceScalingReport { rows, fluid_fit, perp_fit })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multi_indices_count() {
        assert_eq!(multi_indices(2, 1).len(), 2);
        assert_eq!(multi_indices(2, 2).len(), 3);
        assert_eq!(multi_indices(3, 2).len(), 6);
        assert!(multi_indices(3, 2).iter().all(|b| b.iter().sum::<usize>() == 2));
    }

    #[test]
    fn velocity_derivative_of_weighted_polynomial() {
        let spec = MixtureSpec::new(vec![1.0, 2.0], vec![1.0, 1.0]).unwrap();
        let g = PhaseGrid::new(2, 1, 1.0, 16, PhaseGrid::default_v_max(&spec)).unwrap();
        let mu = mu_table(&spec, &g);
        let f = DistributionField::from_fn(2, &g, |s, _, iv| {
            let v = g.velocity(iv);
            mu[s][iv] * v[0] * v[1]
        });
        let d = velocity_derivative(&spec, &g, &f, 0);
        for s in 0..2 {
            let m = spec.masses[s];
            for iv in 0..g.n_vel() {
                let v = g.velocity(iv);
                let k = g.multi_index(iv)[0];
                if k < 2 || k + 2 >= g.nv() {
                    continue;
                }
                let exact = mu[s][iv] * (v[1] - m * v[0] * v[0] * v[1]);
                assert!((d.get(s, 0, iv) - exact).abs() < 1e-12 * (1.0 + exact.abs()), "{s} {iv}");
            }
        }
    }
}

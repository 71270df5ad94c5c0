//! Flux-incompressible Maxwell-Stefan system in the perturbative split
//! c_i = c_∞ + ε c̃_i, u_i = ū + ε ũ_i on a 1-D periodic domain along x.
//!
//! The bulk field ū is divergence-free data; in one dimension that means
//! ū = (0, U(x, t), 0), so only ũ_x is nonzero.

use crate::error::{Error, Result};
use crate::mixture::{FluidSplit, MacroField, MixtureSpec, Vec3};
use crate::numerics::{linear_fit, LinearFit, Spectral1d};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Analytic divergence-free bulk velocity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UBarProfile {
    Zero,
    /// (0, A sin(2πkx/L), 0).
    SinShear { amplitude: f64, mode: usize },
    /// (0, A sin(2πkx/L) cos(ωt), 0).
    PeriodicShear { amplitude: f64, mode: usize, omega: f64 },
}

impl Default for UBarProfile {
    fn default() -> Self {
        UBarProfile::Zero
    }
}

impl UBarProfile {
    pub fn value(&self, x: f64, t: f64, lx: f64) -> Vec3 {
        match *self {
            UBarProfile::Zero => [0.0; 3],
            UBarProfile::SinShear { amplitude, mode } => [0.0, amplitude * (2.0 * PI * mode as f64 * x / lx).sin(), 0.0],
            UBarProfile::PeriodicShear { amplitude, mode, omega } => {
                [0.0, amplitude * (2.0 * PI * mode as f64 * x / lx).sin() * (omega * t).cos(), 0.0]
            }
        }
    }

    pub fn time_derivative(&self, x: f64, t: f64, lx: f64) -> Vec3 {
        match *self {
            UBarProfile::PeriodicShear { amplitude, mode, omega } => {
                [0.0, -amplitude * omega * (2.0 * PI * mode as f64 * x / lx).sin() * (omega * t).sin(), 0.0]
            }
            _ => [0.0; 3],
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match *self {
            UBarProfile::Zero => 0.0,
            UBarProfile::SinShear { amplitude, .. } | UBarProfile::PeriodicShear { amplitude, .. } => amplitude.abs(),
        }
    }
}

/// [A(c) w]_i = Σ_{j≠i} c_i c_j (w_i - w_j)/Δ_ij at one point.
pub fn ms_matrix_apply(delta: &[Vec<f64>], c: &[f64], w: &[f64]) -> Vec<f64> {
    let n = c.len();
    (0..n)
        .map(|i| (0..n).filter(|&j| j != i).map(|j| c[i] * c[j] * (w[i] - w[j]) / delta[i][j]).sum())
        .collect()
}

fn ms_matrix(delta: &[Vec<f64>], c: &[f64]) -> DMatrix<f64> {
    let n = c.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let k = c[i] * c[j] / delta[i][j];
                a[(i, i)] += k;
                a[(i, j)] -= k;
            }
        }
    }
    a
}

/// Solves A(c) w = rhs with ⟨c, w⟩ = constraint via the bordered system.
/// `x` only labels the error.
pub fn solve_bordered(delta: &[Vec<f64>], c: &[f64], rhs: &[f64], constraint: f64, x: usize) -> Result<Vec<f64>> {
    let n = c.len();
    let a = ms_matrix(delta, c);
    let mut k = DMatrix::zeros(n + 1, n + 1);
    k.view_mut((0, 0), (n, n)).copy_from(&a);
    for i in 0..n {
        k[(i, n)] = c[i];
        k[(n, i)] = c[i];
    }
    let mut b = DVector::zeros(n + 1);
    for i in 0..n {
        b[i] = rhs[i];
    }
    b[n] = constraint;
    let sv = k.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if !(smin > 1e-13 * smax) {
        return Err(Error::SingularMs(x));
    }
    let sol = k.lu().solve(&b).ok_or(Error::SingularMs(x))?;
    Ok((0..n).map(|i| sol[i]).collect())
}

/// ũ from A(c) ũ = -∇c̃ with ⟨c, ũ⟩ = 0 at one point, one spatial direction.
pub fn solve_velocities(delta: &[Vec<f64>], c: &[f64], grad_c_tilde: &[f64]) -> Result<Vec<f64>> {
    let rhs: Vec<f64> = grad_c_tilde.iter().map(|g| -g).collect();
    solve_bordered(delta, c, &rhs, 0.0, 0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MSState {
    pub spec: MixtureSpec,
    pub lx: f64,
    /// c̃_i(x), species-major.
    pub c_tilde: Vec<Vec<f64>>,
    /// ũ_i(x); only the x component is nonzero.
    pub u_tilde: Vec<Vec<Vec3>>,
    pub u_bar: UBarProfile,
    pub epsilon: f64,
    pub t: f64,
}

impl MSState {
    /// Builds the state with ũ solved from c̃.
    pub fn new(spec: &MixtureSpec, lx: f64, c_tilde: Vec<Vec<f64>>, u_bar: UBarProfile, epsilon: f64) -> Result<Self> {
        let n = spec.n_species();
        if c_tilde.len() != n || c_tilde.iter().any(|c| c.len() != c_tilde[0].len()) || c_tilde[0].is_empty() {
            return Err(Error::GridMismatch("c_tilde shape".into()));
        }
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::InvalidSpec(format!("epsilon {epsilon} outside (0, 1]")));
        }
        let nx = c_tilde[0].len();
        let mut s = MSState {
            spec: spec.clone(),
            lx,
            c_tilde,
            u_tilde: vec![vec![[0.0; 3]; nx]; n],
            u_bar,
            epsilon,
            t: 0.0,
        };
        s.check_density()?;
        s.u_tilde = s.velocities_for(&s.c_tilde)?;
        Ok(s)
    }

    /// Zero perturbation.
    pub fn quiescent(spec: &MixtureSpec, lx: f64, nx: usize, u_bar: UBarProfile, epsilon: f64) -> Result<Self> {
        MSState::new(spec, lx, vec![vec![0.0; nx]; spec.n_species()], u_bar, epsilon)
    }

    /// c̃_i = a_i cos(2πkx/L) with Σ a_i = 0 enforced by removing the mean of `amplitudes`.
    pub fn sinusoidal(
        spec: &MixtureSpec,
        lx: f64,
        nx: usize,
        amplitudes: &[f64],
        mode: usize,
        u_bar: UBarProfile,
        epsilon: f64,
    ) -> Result<Self> {
        let n = spec.n_species();
        if amplitudes.len() != n {
            return Err(Error::InvalidSpec("one amplitude per species".into()));
        }
        let mean = amplitudes.iter().sum::<f64>() / n as f64;
        let c = (0..n)
            .map(|i| {
                (0..nx)
                    .map(|x| (amplitudes[i] - mean) * (2.0 * PI * mode as f64 * x as f64 / nx as f64).cos())
                    .collect()
            })
            .collect();
        MSState::new(spec, lx, c, u_bar, epsilon)
    }

    /// Same data with c̃ and t replaced and ũ re-solved.
    pub fn with_c_tilde(&self, c_tilde: Vec<Vec<f64>>, t: f64) -> Result<Self> {
        let mut s = self.clone();
        s.c_tilde = c_tilde;
        s.t = t;
        s.check_positive()?;
        s.u_tilde = s.velocities_for(&s.c_tilde)?;
        Ok(s)
    }

    pub fn nx(&self) -> usize {
        self.c_tilde[0].len()
    }

    pub fn dx(&self) -> f64 {
        self.lx / self.nx() as f64
    }

    pub fn x(&self, ix: usize) -> f64 {
        ix as f64 * self.dx()
    }

    /// c_i(x) = c_∞ + ε c̃_i.
    pub fn density(&self, c_tilde: &[Vec<f64>], x: usize) -> Vec<f64> {
        (0..self.spec.n_species()).map(|i| self.spec.c_inf[i] + self.epsilon * c_tilde[i][x]).collect()
    }

    fn check_positive_of(&self, c_tilde: &[Vec<f64>]) -> Result<()> {
        for x in 0..self.nx() {
            for (i, c) in self.density(c_tilde, x).iter().enumerate() {
                if !(*c > 0.0) {
                    return Err(Error::PositivityLoss { species: i, x });
                }
            }
        }
        Ok(())
    }

    fn check_positive(&self) -> Result<()> {
        self.check_positive_of(&self.c_tilde)
    }

    /// Construction-time variant of the positivity check.
    fn check_density(&self) -> Result<()> {
        self.check_positive().map_err(|e| match e {
            Error::PositivityLoss { species, x } => Error::NonPositiveDensity { species, x },
            e => e,
        })
    }

    fn velocities_for(&self, c_tilde: &[Vec<f64>]) -> Result<Vec<Vec<Vec3>>> {
        let n = self.spec.n_species();
        let nx = self.nx();
        let sp = Spectral1d::new(nx, self.lx);
        let grad: Vec<Vec<f64>> = c_tilde.iter().map(|c| sp.derivative(c)).collect();
        let mut u = vec![vec![[0.0; 3]; nx]; n];
        for x in 0..nx {
            let c = self.density(c_tilde, x);
            let rhs: Vec<f64> = (0..n).map(|i| -grad[i][x]).collect();
            let w = solve_bordered(&self.spec.delta, &c, &rhs, 0.0, x)?;
            for i in 0..n {
                u[i][x][0] = w[i];
            }
        }
        Ok(u)
    }

    /// -∂_x(c_i ũ_i) for a given c̃, with ũ solved from it.
    fn mass_rhs(&self, c_tilde: &[Vec<f64>], u_tilde: &[Vec<Vec3>]) -> Vec<Vec<f64>> {
        let sp = Spectral1d::new(self.nx(), self.lx);
        (0..self.spec.n_species())
            .map(|i| {
                let flux: Vec<f64> = (0..self.nx()).map(|x| self.density(c_tilde, x)[i] * u_tilde[i][x][0]).collect();
                sp.derivative(&flux).into_iter().map(|d| -d).collect()
            })
            .collect()
    }

    /// Bulk velocity on the grid at the state's time.
    pub fn u_bar_grid(&self) -> Vec<Vec3> {
        (0..self.nx()).map(|x| self.u_bar.value(self.x(x), self.t, self.lx)).collect()
    }

    pub fn u_bar_dt_grid(&self) -> Vec<Vec3> {
        (0..self.nx()).map(|x| self.u_bar.time_derivative(self.x(x), self.t, self.lx)).collect()
    }

    pub fn split(&self) -> FluidSplit {
        FluidSplit {
            c_inf: self.spec.c_inf.clone(),
            c_tilde: self.c_tilde.clone(),
            u_bar: self.u_bar_grid(),
            u_tilde: self.u_tilde.clone(),
            epsilon: self.epsilon,
        }
    }

    /// Full (c, u) fields.
    pub fn macro_field(&self) -> MacroField {
        MacroField::from_split(self.split())
    }

    /// ‖c̃‖_{L²} summed over species.
    pub fn c_tilde_norm(&self) -> f64 {
        let dx = self.dx();
        self.c_tilde.iter().flatten().map(|c| c * c * dx).sum::<f64>().sqrt()
    }

    /// Largest pointwise |Σ_i c̃_i|.
    pub fn sum_residual(&self) -> f64 {
        (0..self.nx()).map(|x| self.c_tilde.iter().map(|c| c[x]).sum::<f64>().abs()).fold(0.0, f64::max)
    }

    /// Largest |∫ c̃_i dx|.
    pub fn mean_residual(&self) -> f64 {
        let dx = self.dx();
        self.c_tilde.iter().map(|c| (c.iter().sum::<f64>() * dx).abs()).fold(0.0, f64::max)
    }

    /// Largest pointwise |⟨c, ũ⟩|.
    pub fn orthogonality_residual(&self) -> f64 {
        (0..self.nx())
            .map(|x| {
                let c = self.density(&self.c_tilde, x);
                (0..c.len()).map(|i| c[i] * self.u_tilde[i][x][0]).sum::<f64>().abs()
            })
            .fold(0.0, f64::max)
    }

    /// L² norm of ∂_x(Σ_i c_i u_{i,x}).
    pub fn incompressibility_residual(&self) -> f64 {
        let sp = Spectral1d::new(self.nx(), self.lx);
        let ub = self.u_bar_grid();
        let flux: Vec<f64> = (0..self.nx())
            .map(|x| {
                let c = self.density(&self.c_tilde, x);
                (0..c.len()).map(|i| c[i] * (ub[x][0] + self.epsilon * self.u_tilde[i][x][0])).sum()
            })
            .collect();
        let d = sp.derivative(&flux);
        (d.iter().map(|v| v * v).sum::<f64>() * self.dx()).sqrt()
    }

    /// Largest dt for which RK4 on the linearized diffusion and the advective flux stays stable.
    pub fn max_stable_dt(&self, cfl: f64) -> f64 {
        let dx = self.dx();
        let dmax = self.spec.delta.iter().flatten().cloned().fold(0.0, f64::max);
        let cmin = (0..self.nx())
            .flat_map(|x| self.density(&self.c_tilde, x))
            .fold(f64::INFINITY, f64::min);
        let diff = dmax / cmin;
        let kmax = PI / dx;
        let umax = self.u_tilde.iter().flatten().map(|u| u[0].abs()).fold(0.0, f64::max);
        let mut dt = 2.5 / (diff * kmax * kmax);
        if umax > 0.0 {
            dt = dt.min(dx / umax);
        }
        cfl * dt
    }
}

/// Time derivatives (∂_t c̃, ∂_t ũ).
pub fn dt_macro(state: &MSState) -> Result<(Vec<Vec<f64>>, Vec<Vec<Vec3>>)> {
    let n = state.spec.n_species();
    let nx = state.nx();
    let eps = state.epsilon;
    let dtc = state.mass_rhs(&state.c_tilde, &state.u_tilde);
    let sp = Spectral1d::new(nx, state.lx);
    let grad_dtc: Vec<Vec<f64>> = dtc.iter().map(|d| sp.derivative(d)).collect();
    let mut dtu = vec![vec![[0.0; 3]; nx]; n];
    for x in 0..nx {
        let c = state.density(&state.c_tilde, x);
        let dc: Vec<f64> = (0..n).map(|i| eps * dtc[i][x]).collect();
        let u: Vec<f64> = (0..n).map(|i| state.u_tilde[i][x][0]).collect();
        let mut rhs: Vec<f64> = (0..n).map(|i| -grad_dtc[i][x]).collect();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let dk = (dc[i] * c[j] + c[i] * dc[j]) / state.spec.delta[i][j];
                    rhs[i] -= dk * (u[i] - u[j]);
                }
            }
        }
        let constraint = -eps * (0..n).map(|i| dtc[i][x] * u[i]).sum::<f64>();
        let w = solve_bordered(&state.spec.delta, &c, &rhs, constraint, x)?;
        for i in 0..n {
            dtu[i][x][0] = w[i];
        }
    }
    Ok((dtc, dtu))
}

/// Removes species means, then the pointwise species average.
pub fn project_invariants(c: &mut [Vec<f64>]) {
    let n = c.len();
    let nx = c[0].len();
    for ci in c.iter_mut() {
        let mean = ci.iter().sum::<f64>() / nx as f64;
        ci.iter_mut().for_each(|v| *v -= mean);
    }
    for x in 0..nx {
        let s = c.iter().map(|ci| ci[x]).sum::<f64>() / n as f64;
        c.iter_mut().for_each(|ci| ci[x] -= s);
    }
}

/// One RK4 step of the mass laws, ũ re-solved at each stage.
pub fn step_ms(state: &MSState, dt: f64) -> Result<MSState> {
    let bound = state.max_stable_dt(1.0);
    if dt > bound {
        return Err(Error::CflViolation { dt, bound });
    }
    let comb = |base: &[Vec<f64>], k: &[Vec<f64>], a: f64| -> Vec<Vec<f64>> {
        base.iter().zip(k).map(|(b, d)| b.iter().zip(d).map(|(x, y)| x + a * y).collect()).collect()
    };
    let stage = |c: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
        state.check_positive_of(c)?;
        let u = state.velocities_for(c)?;
        Ok(state.mass_rhs(c, &u))
    };
    let c0 = &state.c_tilde;
    let k1 = state.mass_rhs(c0, &state.u_tilde);
    let k2 = stage(&comb(c0, &k1, 0.5 * dt))?;
    let k3 = stage(&comb(c0, &k2, 0.5 * dt))?;
    let k4 = stage(&comb(c0, &k3, dt))?;
    let mut c: Vec<Vec<f64>> = (0..c0.len())
        .map(|i| {
            (0..c0[i].len())
                .map(|x| c0[i][x] + dt / 6.0 * (k1[i][x] + 2.0 * k2[i][x] + 2.0 * k3[i][x] + k4[i][x]))
                .collect()
        })
        .collect();
    project_invariants(&mut c);
    let mut next = state.clone();
    next.c_tilde = c;
    next.t = state.t + dt;
    next.check_positive()?;
    next.u_tilde = next.velocities_for(&next.c_tilde)?;
    if !next.c_tilde.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("Maxwell-Stefan densities".into()));
    }
    Ok(next)
}

/// Advances to `t_end` with steps no larger than `dt`, recording (t, ‖c̃‖).
pub fn run_ms(state: &MSState, dt: f64, t_end: f64) -> Result<(MSState, Vec<(f64, f64)>)> {
    let steps = ((t_end - state.t) / dt).ceil().max(0.0) as usize;
    let h = if steps > 0 { (t_end - state.t) / steps as f64 } else { 0.0 };
    let mut s = state.clone();
    let mut hist = vec![(s.t, s.c_tilde_norm())];
    for _ in 0..steps {
        s = step_ms(&s, h)?;
        hist.push((s.t, s.c_tilde_norm()));
    }
    Ok((s, hist))
}

/// Fit of ln ‖c̃(t)‖ = a - λ t; returns (λ, fit).
pub fn fit_decay(history: &[(f64, f64)]) -> (f64, LinearFit) {
    let t: Vec<f64> = history.iter().map(|h| h.0).collect();
    let y: Vec<f64> = history.iter().map(|h| h.1.ln()).collect();
    let fit = linear_fit(&t, &y);
    (-fit.slope, fit)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompatibilityReport {
    pub sum_zero_residual: f64,
    pub mean_zero_residual: f64,
    pub min_density: f64,
    pub moment_residual: f64,
    pub orthogonality_residual: f64,
    /// ‖c̃⁰‖_{L²}, a surrogate for the smallness constant.
    pub c_tilde_norm: f64,
    /// sup |ū|, a surrogate for the smallness constant.
    pub u_bar_norm: f64,
    pub tolerance: f64,
    pub sum_zero_ok: bool,
    pub mean_zero_ok: bool,
    pub positivity_ok: bool,
    pub moment_ok: bool,
    pub orthogonality_ok: bool,
}

impl CompatibilityReport {
    pub fn all_pass(&self) -> bool {
        self.sum_zero_ok && self.mean_zero_ok && self.positivity_ok && self.moment_ok && self.orthogonality_ok
    }
}

/// Checks initial data (c̃⁰, ũ⁰, ū) against the compatibility relations.
pub fn check_compatibility(
    spec: &MixtureSpec,
    lx: f64,
    c_tilde: &[Vec<f64>],
    u_tilde: &[Vec<Vec3>],
    u_bar: &UBarProfile,
    epsilon: f64,
    tolerance: f64,
) -> CompatibilityReport {
    let n = spec.n_species();
    let nx = c_tilde[0].len();
    let dx = lx / nx as f64;
    let sp = Spectral1d::new(nx, lx);
    let grad: Vec<Vec<f64>> = c_tilde.iter().map(|c| sp.derivative(c)).collect();
    let mut sum_zero: f64 = 0.0;
    let mut min_density = f64::INFINITY;
    let mut moment: f64 = 0.0;
    let mut ortho: f64 = 0.0;
    for x in 0..nx {
        sum_zero = sum_zero.max(c_tilde.iter().map(|c| c[x]).sum::<f64>().abs());
        let c: Vec<f64> = (0..n).map(|i| spec.c_inf[i] + epsilon * c_tilde[i][x]).collect();
        min_density = c.iter().cloned().fold(min_density, f64::min);
        let w: Vec<f64> = (0..n).map(|i| u_tilde[i][x][0]).collect();
        let aw = ms_matrix_apply(&spec.delta, &c, &w);
        for i in 0..n {
            moment = moment.max((aw[i] + grad[i][x]).abs());
        }
        ortho = ortho.max((0..n).map(|i| c[i] * w[i]).sum::<f64>().abs());
    }
    let mean_zero = c_tilde.iter().map(|c| (c.iter().sum::<f64>() * dx).abs()).fold(0.0, f64::max);
    let c_norm = c_tilde.iter().flatten().map(|c| c * c * dx).sum::<f64>().sqrt();
    CompatibilityReport {
        sum_zero_residual: sum_zero,
        mean_zero_residual: mean_zero,
        min_density,
        moment_residual: moment,
        orthogonality_residual: ortho,
        c_tilde_norm: c_norm,
        u_bar_norm: u_bar.sup_norm(),
        tolerance,
        sum_zero_ok: sum_zero <= tolerance,
        mean_zero_ok: mean_zero <= tolerance,
        positivity_ok: min_density > 0.0,
        moment_ok: moment <= tolerance,
        orthogonality_ok: ortho <= tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_species_matrix() {
        let delta = vec![vec![1.0; 2]; 2];
        let r = ms_matrix_apply(&delta, &[1.0, 1.0], &[3.0, 1.0]);
        assert_eq!(r, vec![2.0, -2.0]);
    }

    #[test]
    fn bordered_solve_residual() {
        let delta = vec![vec![1.0, 0.7, 1.3], vec![0.7, 1.0, 0.9], vec![1.3, 0.9, 1.0]];
        let c = [0.8, 1.1, 1.4];
        let g = [0.3, -0.5, 0.2];
        let u = solve_velocities(&delta, &c, &g).unwrap();
        let au = ms_matrix_apply(&delta, &c, &u);
        for i in 0..3 {
            assert!((au[i] + g[i]).abs() < 1e-12);
        }
        assert!((0..3).map(|i| c[i] * u[i]).sum::<f64>().abs() < 1e-12);
    }
}

//! Small numerical building blocks shared by the solver modules.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p, dp)
}

/// Gauss-Legendre rule mapped to [a, b].
pub fn gauss_legendre_interval(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|wi| half * wi).collect(),
    )
}

/// Interpolation order of the velocity-lattice reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpOrder {
    Linear,
    Cubic,
}

impl InterpOrder {
    pub fn points(self) -> usize {
        match self {
            InterpOrder::Linear => 2,
            InterpOrder::Cubic => 4,
        }
    }
}

/// One-dimensional Lagrange weights on integer nodes 0..p at local coordinate t.
#[inline]
pub fn lagrange_weights(order: InterpOrder, t: f64) -> [f64; 4] {
    match order {
        InterpOrder::Linear => [1.0 - t, t, 0.0, 0.0],
        InterpOrder::Cubic => {
            let a = t;
            let b = t - 1.0;
            let c = t - 2.0;
            let d = t - 3.0;
            [
                -b * c * d / 6.0,
                a * c * d / 2.0,
                -a * b * d / 2.0,
                a * b * c / 6.0,
            ]
        }
    }
}

/// Spectral operations on a periodic 1-D grid.
pub struct Spectral1d {
    n: usize,
    length: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Spectral1d {
    pub fn new(n: usize, length: f64) -> Self {
        let mut planner = FftPlanner::new();
        Spectral1d {
            n,
            length,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Angular wavenumber of FFT bin k.
    pub fn wavenumber(&self, k: usize) -> f64 {
        let kk = if k <= self.n / 2 { k as f64 } else { k as f64 - self.n as f64 };
        2.0 * PI * kk / self.length
    }

    fn transform(&self, u: &[f64]) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = u.iter().map(|&x| Complex::new(x, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf
    }

    fn back(&self, mut buf: Vec<Complex<f64>>) -> Vec<f64> {
        self.inv.process(&mut buf);
        let s = 1.0 / self.n as f64;
        buf.iter().map(|c| c.re * s).collect()
    }

    /// Spectral derivative; the Nyquist mode is dropped.
    pub fn derivative(&self, u: &[f64]) -> Vec<f64> {
        if self.n == 1 {
            return vec![0.0];
        }
        let mut hat = self.transform(u);
        for (k, c) in hat.iter_mut().enumerate() {
            if self.n % 2 == 0 && k == self.n / 2 {
                *c = Complex::new(0.0, 0.0);
            } else {
                *c *= Complex::new(0.0, self.wavenumber(k));
            }
        }
        self.back(hat)
    }

    /// Exact translation u(x) -> u(x - a).
    pub fn shift(&self, u: &[f64], a: f64) -> Vec<f64> {
        if self.n == 1 {
            return u.to_vec();
        }
        let mut hat = self.transform(u);
        for (k, c) in hat.iter_mut().enumerate() {
            let phase = -self.wavenumber(k) * a;
            if self.n % 2 == 0 && k == self.n / 2 {
                *c *= phase.cos();
            } else {
                *c *= Complex::new(phase.cos(), phase.sin());
            }
        }
        self.back(hat)
    }
}

/// Least-squares line y = a + b x with coefficient of determination.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    LinearFit { intercept, slope, r_squared }
}

/// Deterministic seeded generator used throughout.
pub fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for p in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(p as i32)).sum();
                let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} p={p} q={q}");
            }
        }
    }

    #[test]
    fn cubic_weights_reproduce_cubics() {
        for &t in &[0.3, 1.5, 2.25, -0.4] {
            let w = lagrange_weights(InterpOrder::Cubic, t);
            for p in 0..4 {
                let s: f64 = (0..4).map(|k| w[k] * (k as f64).powi(p)).sum();
                assert!((s - t.powi(p)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spectral_derivative_of_sine() {
        let n = 32;
        let l = 2.0 * PI;
        let sp = Spectral1d::new(n, l);
        let u: Vec<f64> = (0..n).map(|i| (3.0 * l * i as f64 / n as f64).sin()).collect();
        let du = sp.derivative(&u);
        for i in 0..n {
            let x = l * i as f64 / n as f64;
            assert!((du[i] - 3.0 * (3.0 * x).cos()).abs() < 1e-12);
        }
        let s = sp.shift(&u, 0.7);
        for i in 0..n {
            let x = l * i as f64 / n as f64;
            assert!((s[i] - (3.0 * (x - 0.7)).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|t| 2.0 - 0.5 * t).collect();
        let f = linear_fit(&x, &y);
        assert!((f.slope + 0.5).abs() < 1e-14 && (f.r_squared - 1.0).abs() < 1e-14);
    }
}

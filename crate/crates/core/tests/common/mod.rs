#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use probe_tomo::statespace::hermite_functions;
use probe_tomo::{DensityMatrix, FockState};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn gaussian(rng: &mut impl Rng) -> Complex64 {
    c(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Haar-distributed pure state with `n` levels.
pub fn random_state(rng: &mut impl Rng, n: usize) -> FockState {
    FockState::new((0..n).map(|_| gaussian(rng)).collect()).unwrap()
}

/// `G G† / Tr(G G†)` with Gaussian `G`.
pub fn random_density(rng: &mut impl Rng, n: usize) -> DensityMatrix {
    let g = DMatrix::from_fn(n, n, |_, _| gaussian(rng));
    let mut rho = &g * g.adjoint();
    let tr = rho.trace();
    rho /= tr;
    DensityMatrix::new((&rho + rho.adjoint()) * c(0.5, 0.0)).unwrap()
}

/// Builds a state from raw amplitude pairs, or `None` if they vanish.
pub fn state_from(parts: &[(f64, f64)]) -> Option<FockState> {
    FockState::new(parts.iter().map(|&(a, b)| c(a, b)).collect()).ok()
}

/// Uniform grid `[-half, half]` with `n` points.
pub fn grid(half: f64, n: usize) -> Vec<f64> {
    let dx = 2.0 * half / (n - 1) as f64;
    (0..n).map(|i| -half + i as f64 * dx).collect()
}

/// `⟨m| e^{ikX + iqP} |n⟩ = e^{ikq/2} ∫ ψ_m(x) e^{ikx} ψ_n(x + q) dx` by the
/// trapezoid rule on `[-20, 20]`, for every `m, n < cutoff`.
pub struct QuadratureOracle {
    xs: Vec<f64>,
    dx: f64,
    h: Vec<Vec<f64>>,
    cutoff: usize,
}

impl QuadratureOracle {
    pub fn new(cutoff: usize) -> Self {
        let xs = grid(20.0, 8001);
        let dx = xs[1] - xs[0];
        let h = xs.iter().map(|&x| hermite_functions(x, cutoff)).collect();
        Self { xs, dx, h, cutoff }
    }

    pub fn matrix(&self, k: f64, q: f64) -> DMatrix<Complex64> {
        let shifted: Vec<Vec<f64>> = self.xs.iter().map(|&x| hermite_functions(x + q, self.cutoff)).collect();
        let phases: Vec<Complex64> = self.xs.iter().map(|&x| Complex64::from_polar(1.0, k * x)).collect();
        let global = Complex64::from_polar(1.0, 0.5 * k * q) * self.dx;
        DMatrix::from_fn(self.cutoff, self.cutoff, |m, n| {
            let mut acc = c(0.0, 0.0);
            for i in 0..self.xs.len() {
                acc += phases[i] * (self.h[i][m] * shifted[i][n]);
            }
            acc * global
        })
    }
}

/// Momentum wavefunction by direct quadrature of
/// `(2π)^{-1/2} ∫ ψ(x) e^{-ipx} dx` over a sampled position profile.
pub fn fourier_transform(xs: &[f64], psi: &[Complex64], p: f64) -> Complex64 {
    let dx = xs[1] - xs[0];
    let mut acc = c(0.0, 0.0);
    for (x, v) in xs.iter().zip(psi) {
        acc += v * Complex64::from_polar(1.0, -p * x);
    }
    acc * dx / (2.0 * std::f64::consts::PI).sqrt()
}

/// Sup distance after removing the best global phase.
pub fn aligned_sup(a: &[Complex64], b: &[Complex64]) -> f64 {
    let overlap: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    let phase = if overlap.norm() > 0.0 {
        overlap / overlap.norm()
    } else {
        c(1.0, 0.0)
    };
    a.iter().zip(b).map(|(x, y)| (x * phase - y).norm()).fold(0.0, f64::max)
}

//! Direct estimation of density-matrix elements.
//!
//! Free evolution by `ωt₀` multiplies `c_{n,m}` by `e^{−i(n−m)ωt₀}`, so the
//! probe signals measured at several phases form a real linear system in the
//! independent parameters of a Hermitian matrix: the diagonal `c_{nn}` and the
//! pairs `Re c_{nm}`, `Im c_{nm}` for `n < m`. For such a pair
//!
//! ```text
//! c_{nm} e^{−iθ} ⟨m|e^{ikX}|n⟩ + c_{mn} e^{iθ} ⟨n|e^{ikX}|m⟩
//!     = 2 (Re c_{nm} cos θ + Im c_{nm} sin θ) ⟨m|e^{ikX}|n⟩,   θ = (n − m) ωt₀,
//! ```
//!
//! because the position-only displacement block is symmetric. Even signals
//! take the real part of each coefficient, odd signals the imaginary part.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::response::{
    default_rotation_schedule, displacement_matrix, rotated_settings, ExperimentSetting, SignalSeries,
};
use crate::statespace::DensityMatrix;

const RANK_TOL: f64 = 1e-10;
const SETTING_TOL: f64 = 1e-12;

/// One real unknown of a Hermitian matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    Diag(usize),
    Re(usize, usize),
    Im(usize, usize),
}

fn parameters(cutoff: usize) -> Vec<Parameter> {
    let mut out: Vec<Parameter> = (0..cutoff).map(Parameter::Diag).collect();
    for n in 0..cutoff {
        for m in n + 1..cutoff {
            out.push(Parameter::Re(n, m));
            out.push(Parameter::Im(n, m));
        }
    }
    out
}

/// 40 points evenly covering `[0, 6]`.
pub fn default_k_list() -> Vec<f64> {
    (0..40).map(|j| 6.0 * j as f64 / 39.0).collect()
}

/// Linear map from Hermitian parameters to predicted signals. Rows come in
/// pairs (even, odd) per setting, in setting order.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    matrix: DMatrix<f64>,
    settings: Vec<ExperimentSetting>,
    columns: Vec<Parameter>,
    cutoff: usize,
}

/// Every `(ωt₀, k)` combination of the two lists.
pub fn build_design_matrix(k_list: &[f64], t0_list: &[f64], cutoff: usize) -> Result<DesignMatrix> {
    if k_list.is_empty() || t0_list.is_empty() {
        return Err(TomoError::InvalidInput("design needs non-empty k and t0 lists".into()));
    }
    build_design_for_settings(rotated_settings(k_list, t0_list)?, cutoff)
}

/// Design for an explicit, arbitrarily ordered list of settings.
pub fn build_design_for_settings(settings: Vec<ExperimentSetting>, cutoff: usize) -> Result<DesignMatrix> {
    if cutoff == 0 {
        return Err(TomoError::InvalidInput("cutoff must be >= 1".into()));
    }
    if settings.is_empty() {
        return Err(TomoError::InvalidInput("design needs at least one setting".into()));
    }
    if let Some(s) = settings.iter().find(|s| s.q != 0.0) {
        return Err(TomoError::InvalidInput(format!(
            "density-matrix settings use a position-only coupling, found q = {}",
            s.q
        )));
    }
    let columns = parameters(cutoff);
    let mut matrix = DMatrix::zeros(2 * settings.len(), columns.len());
    for (row, s) in settings.iter().enumerate() {
        let d = displacement_matrix(cutoff, s.k, 0.0);
        for (col, p) in columns.iter().enumerate() {
            let coeff: Complex64 = match *p {
                Parameter::Diag(n) => d[(n, n)],
                Parameter::Re(n, m) => d[(m, n)] * (2.0 * ((n as f64 - m as f64) * s.omega_t0()).cos()),
                Parameter::Im(n, m) => d[(m, n)] * (2.0 * ((n as f64 - m as f64) * s.omega_t0()).sin()),
            };
            matrix[(2 * row, col)] = coeff.re;
            matrix[(2 * row + 1, col)] = coeff.im;
        }
    }
    Ok(DesignMatrix {
        matrix,
        settings,
        columns,
        cutoff,
    })
}

/// Default design: [`default_k_list`] at phases `jπ/(2N)`.
pub fn default_design(cutoff: usize) -> Result<DesignMatrix> {
    build_design_matrix(&default_k_list(), &default_rotation_schedule(cutoff), cutoff)
}

fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.ncols() == 0 {
        return vec![];
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

fn condition_from(sv: &[f64]) -> f64 {
    match (sv.first(), sv.last()) {
        (Some(&max), Some(&min)) if min > 0.0 => max / min,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

impl DesignMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn settings(&self) -> &[ExperimentSetting] {
        &self.settings
    }

    pub fn columns(&self) -> &[Parameter] {
        &self.columns
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn singular_values(&self) -> Vec<f64> {
        singular_values(&self.matrix)
    }

    /// Numerical rank with relative tolerance `1e-10`.
    pub fn rank(&self) -> usize {
        let sv = self.singular_values();
        let max = sv.first().copied().unwrap_or(0.0);
        sv.iter().filter(|&&s| s > RANK_TOL * max).count()
    }

    pub fn condition_number(&self) -> f64 {
        condition_from(&self.singular_values())
    }

    /// Trace-eliminated system `A' θ = y − b` over all parameters but the
    /// last diagonal one.
    fn reduced(&self) -> (DMatrix<f64>, DVector<f64>) {
        let last = self.cutoff - 1;
        let rows = self.matrix.nrows();
        let keep: Vec<usize> = (0..self.columns.len()).filter(|&c| c != last).collect();
        let offset = self.matrix.column(last).into_owned();
        let reduced = DMatrix::from_fn(rows, keep.len(), |r, j| {
            let c = keep[j];
            match self.columns[c] {
                Parameter::Diag(_) => self.matrix[(r, c)] - offset[r],
                _ => self.matrix[(r, c)],
            }
        });
        (reduced, offset)
    }

    /// Predicted (even, odd) signal pairs for `rho`, in row order.
    pub fn predict(&self, rho: &DensityMatrix) -> Result<DVector<f64>> {
        if rho.cutoff() != self.cutoff {
            return Err(TomoError::DimensionMismatch(format!(
                "design cutoff {} but state cutoff {}",
                self.cutoff,
                rho.cutoff()
            )));
        }
        let theta = DVector::from_iterator(
            self.columns.len(),
            self.columns.iter().map(|p| match *p {
                Parameter::Diag(n) => rho.get(n, n).re,
                Parameter::Re(n, m) => rho.get(n, m).re,
                Parameter::Im(n, m) => rho.get(n, m).im,
            }),
        );
        Ok(&self.matrix * theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum Ridge {
    None,
    /// Fixed `λ`.
    Absolute(f64),
    /// `λ = factor · σ_max²` of the trace-eliminated design.
    Relative(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub ridge: Ridge,
    pub psd_projection: bool,
}

impl SolveOptions {
    /// Plain least squares, no projection.
    pub fn exact() -> Self {
        Self {
            ridge: Ridge::None,
            psd_projection: false,
        }
    }

    /// Ridge `1e-4 σ_max²` and eigenvalue clipping.
    pub fn sampled() -> Self {
        Self {
            ridge: Ridge::Relative(1e-4),
            psd_projection: true,
        }
    }
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self::exact()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub residual_norm: f64,
    pub condition_number: f64,
    pub rank: usize,
    pub unknowns: usize,
    pub ridge_lambda: f64,
    pub projected: bool,
}

#[derive(Debug, Clone)]
pub struct MixedReconstruction {
    pub rho: DensityMatrix,
    pub report: SolverReport,
}

/// Concatenates the values of `measurements` into design row order after
/// checking that the settings line up.
fn measurement_vector(design: &DesignMatrix, measurements: &[SignalSeries]) -> Result<DVector<f64>> {
    let total: usize = measurements.iter().map(SignalSeries::len).sum();
    if total != design.settings.len() {
        return Err(TomoError::DimensionMismatch(format!(
            "design has {} settings, measurements have {total}",
            design.settings.len()
        )));
    }
    let mut y = Vec::with_capacity(2 * total);
    let mut idx = 0;
    for series in measurements {
        for (s, (e, o)) in series.settings().iter().zip(series.even().iter().zip(series.odd())) {
            let d = &design.settings[idx];
            let phase_gap = (s.omega_t0() - d.omega_t0()).abs();
            let phase_gap = phase_gap.min(std::f64::consts::TAU - phase_gap);
            if (s.k - d.k).abs() > SETTING_TOL * d.k.abs().max(1.0) || phase_gap > SETTING_TOL || s.q != d.q {
                return Err(TomoError::DimensionMismatch(format!(
                    "measurement {idx} at (k={}, omega_t0={}) does not match design row (k={}, omega_t0={})",
                    s.k,
                    s.omega_t0(),
                    d.k,
                    d.omega_t0()
                )));
            }
            y.push(*e);
            y.push(*o);
            idx += 1;
        }
    }
    Ok(DVector::from_vec(y))
}

/// `argmin |Aθ − b|² + λ|θ|²` by Householder QR of `[A; √λ I]`.
fn ridge_least_squares(a: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let (rows, cols) = a.shape();
    let (system, rhs) = if lambda > 0.0 {
        let mut m = DMatrix::zeros(rows + cols, cols);
        m.view_mut((0, 0), (rows, cols)).copy_from(a);
        m.view_mut((rows, 0), (cols, cols)).fill_diagonal(lambda.sqrt());
        let mut v = DVector::zeros(rows + cols);
        v.rows_mut(0, rows).copy_from(b);
        (m, v)
    } else {
        (a.clone(), b.clone())
    };
    let qr = system.qr();
    let qtb = qr.q().transpose() * rhs;
    qr.r()
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| TomoError::Numerical("singular triangular factor in least squares".into()))
}

/// Least-squares estimate of `ρ` with the trace fixed to one.
pub fn solve_density_matrix(
    design: &DesignMatrix,
    measurements: &[SignalSeries],
    options: &SolveOptions,
) -> Result<MixedReconstruction> {
    let y = measurement_vector(design, measurements)?;
    let n = design.cutoff;
    let (a, offset) = design.reduced();
    let b = &y - &offset;

    let mut theta_reduced = DVector::zeros(a.ncols());
    let mut lambda = 0.0;
    let mut condition = 1.0;
    let mut rank = 0;
    if a.ncols() > 0 {
        let sv = singular_values(&a);
        let smax = sv[0];
        let smin = sv[sv.len() - 1];
        condition = condition_from(&sv);
        rank = sv.iter().filter(|&&s| s > RANK_TOL * smax).count();
        lambda = match options.ridge {
            Ridge::None => 0.0,
            Ridge::Absolute(l) => l,
            Ridge::Relative(f) => f * smax * smax,
        };
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(TomoError::InvalidInput(format!(
                "ridge lambda {lambda} must be finite and >= 0"
            )));
        }
        if lambda == 0.0 && (smax == 0.0 || smin / smax <= RANK_TOL) {
            return Err(TomoError::RankDeficient {
                ratio: if smax > 0.0 { smin / smax } else { 0.0 },
            });
        }
        theta_reduced = ridge_least_squares(&a, &b, lambda)?;
    }
    let residual_norm = (&a * &theta_reduced - &b).norm();

    let mut entries = DMatrix::<Complex64>::zeros(n, n);
    let mut trace_rest = 0.0;
    let mut j = 0;
    for (c, p) in design.columns.iter().enumerate() {
        if c == n - 1 {
            continue;
        }
        let v = theta_reduced[j];
        j += 1;
        match *p {
            Parameter::Diag(i) => {
                entries[(i, i)] = Complex64::new(v, 0.0);
                trace_rest += v;
            }
            Parameter::Re(r, s) => {
                entries[(r, s)].re = v;
                entries[(s, r)].re = v;
            }
            Parameter::Im(r, s) => {
                entries[(r, s)].im = v;
                entries[(s, r)].im = -v;
            }
        }
    }
    entries[(n - 1, n - 1)] = Complex64::new(1.0 - trace_rest, 0.0);
    let raw = DensityMatrix::from_entries_unchecked(entries)?;
    let rho = if options.psd_projection {
        raw.project_psd()?
    } else {
        raw
    };

    Ok(MixedReconstruction {
        rho,
        report: SolverReport {
            residual_norm,
            condition_number: condition,
            rank,
            unknowns: a.ncols(),
            ridge_lambda: lambda,
            projected: options.psd_projection,
        },
    })
}

const FIDELITY_PSD_TOL: f64 = 1e-10;

/// Uhlmann fidelity `(Tr √(√a b √a))²`.
pub fn fidelity(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.cutoff() != b.cutoff() {
        return Err(TomoError::DimensionMismatch(format!(
            "cutoffs {} and {}",
            a.cutoff(),
            b.cutoff()
        )));
    }
    for (name, m) in [("first", a), ("second", b)] {
        let min = m.eigenvalues()[0];
        if min < -FIDELITY_PSD_TOL {
            return Err(TomoError::InvalidInput(format!(
                "{name} argument is not positive semidefinite (eigenvalue {min:e})"
            )));
        }
    }
    let eig = a.entries().clone().symmetric_eigen();
    let n = a.cutoff();
    let v = &eig.eigenvectors;
    let roots: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let sqrt_a = DMatrix::from_fn(n, n, |i, j| {
        (0..n)
            .map(|l| v[(i, l)] * v[(j, l)].conj() * roots[l])
            .sum::<Complex64>()
    });
    let mut inner = &sqrt_a * b.entries() * &sqrt_a;
    // restore exact Hermiticity before the eigen-solve
    let inner_h = inner.adjoint();
    inner = (inner + inner_h) * Complex64::new(0.5, 0.0);
    let tr: f64 = inner.symmetric_eigenvalues().iter().map(|&m| m.max(0.0).sqrt()).sum();
    Ok((tr * tr).clamp(0.0, 1.0))
}

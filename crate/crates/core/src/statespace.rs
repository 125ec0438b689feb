//! Oscillator states in a truncated Fock basis.
//!
//! Pure states are stored as amplitude vectors `⟨n|ψ⟩`, mixed states as dense
//! Hermitian matrices. Position-space wavefunctions are evaluated from the
//! normalized Hermite functions by recurrence, so nothing here ever forms a
//! raw Hermite polynomial or a factorial.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};

pub const DEFAULT_CUTOFF: usize = 16;

/// Largest probability mass a coherent state may lose to truncation before the
/// constructor attaches a warning.
pub const COHERENT_TRUNCATION_TOL: f64 = 1e-6;

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

// ── position grid ───────────────────────────────────────────────────────────

/// Uniform grid in dimensionless position (or momentum).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionGrid {
    x_min: f64,
    x_max: f64,
    n_points: usize,
}

impl PositionGrid {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_min >= x_max {
            return Err(TomoError::InvalidInput(format!(
                "grid bounds must be finite with x_min < x_max (got [{x_min}, {x_max}])"
            )));
        }
        if n_points < 2 {
            return Err(TomoError::InvalidInput(format!(
                "grid needs at least 2 points (got {n_points})"
            )));
        }
        Ok(Self { x_min, x_max, n_points })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_points - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.x_max
        } else {
            self.x_min + i as f64 * self.dx()
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |i| self.point(i))
    }

    /// Largest |x| covered by the grid.
    pub fn extent(&self) -> f64 {
        self.x_min.abs().max(self.x_max.abs())
    }
}

impl Default for PositionGrid {
    fn default() -> Self {
        Self {
            x_min: -8.0,
            x_max: 8.0,
            n_points: 1024,
        }
    }
}

// ── Hermite functions ───────────────────────────────────────────────────────

/// Fills `out[n] = ψ_n(x)` for `n < out.len()` using the recurrence on the
/// normalized functions
/// `ψ_{n+1} = x √(2/(n+1)) ψ_n − √(n/(n+1)) ψ_{n−1}`.
pub fn hermite_functions_into(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = PI.powf(-0.25) * (-0.5 * x * x).exp();
    if out.len() > 1 {
        out[1] = std::f64::consts::SQRT_2 * x * out[0];
    }
    for n in 1..out.len().saturating_sub(1) {
        let nf = n as f64;
        out[n + 1] = x * (2.0 / (nf + 1.0)).sqrt() * out[n] - (nf / (nf + 1.0)).sqrt() * out[n - 1];
    }
}

/// `[ψ_0(x), …, ψ_{count−1}(x)]`.
pub fn hermite_functions(x: f64, count: usize) -> Vec<f64> {
    let mut out = vec![0.0; count];
    hermite_functions_into(x, &mut out);
    out
}

/// Position wavefunction `⟨x|n⟩` of the n-th Fock state.
pub fn hermite_wavefunction(n: usize, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(TomoError::InvalidInput(format!("non-finite position {x}")));
    }
    Ok(hermite_functions(x, n + 1)[n])
}

// ── pure states ─────────────────────────────────────────────────────────────

/// Normalized pure state `|ψ⟩ = Σ_n a_n |n⟩` truncated at `cutoff()` levels.
#[derive(Debug, Clone, PartialEq)]
pub struct FockState {
    amplitudes: Vec<Complex64>,
}

impl FockState {
    /// Normalizes the given amplitudes. Fails on an empty or all-zero vector.
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(TomoError::InvalidInput("state needs cutoff >= 1".into()));
        }
        if amplitudes.iter().any(|a| !(a.re.is_finite() && a.im.is_finite())) {
            return Err(TomoError::InvalidInput("non-finite amplitude".into()));
        }
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(TomoError::InvalidInput("state has zero norm".into()));
        }
        Ok(Self {
            amplitudes: amplitudes.into_iter().map(|a| a / norm).collect(),
        })
    }

    /// Fock state `|n⟩` in a space with `cutoff` levels.
    pub fn number(n: usize, cutoff: usize) -> Result<Self> {
        if n >= cutoff {
            return Err(TomoError::IndexOutOfRange { index: n, cutoff });
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); cutoff];
        amps[n] = Complex64::new(1.0, 0.0);
        Self::new(amps)
    }

    pub fn vacuum(cutoff: usize) -> Result<Self> {
        Self::number(0, cutoff)
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn cutoff(&self) -> usize {
        self.amplitudes.len()
    }

    /// Same state embedded in (or truncated to) a space of `cutoff` levels.
    pub fn with_cutoff(&self, cutoff: usize) -> Result<Self> {
        let mut amps = self.amplitudes.clone();
        amps.resize(cutoff, Complex64::new(0.0, 0.0));
        Self::new(amps)
    }

    /// `ψ(x) = Σ_n a_n ψ_n(x)`.
    pub fn position_amplitude(&self, x: f64) -> Complex64 {
        let basis = hermite_functions(x, self.cutoff());
        self.amplitudes.iter().zip(&basis).map(|(a, psi)| a * psi).sum()
    }

    /// `∂_x ψ(x)`, from `ψ_n' = √(n/2) ψ_{n−1} − √((n+1)/2) ψ_{n+1}`.
    pub fn position_derivative(&self, x: f64) -> Complex64 {
        let basis = hermite_functions(x, self.cutoff() + 1);
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(n, a)| {
                let nf = n as f64;
                let down = if n > 0 { (nf / 2.0).sqrt() * basis[n - 1] } else { 0.0 };
                a * (down - ((nf + 1.0) / 2.0).sqrt() * basis[n + 1])
            })
            .sum()
    }

    /// Momentum wavefunction, using `⟨p|n⟩ = (−i)^n ψ_n(p)`.
    pub fn momentum_amplitude(&self, p: f64) -> Complex64 {
        self.rotated_quarter().position_amplitude(p)
    }

    /// The state after a quarter period of free evolution, `e^{−iπ a†a/2}|ψ⟩`,
    /// whose position wavefunction is the momentum wavefunction of `self`.
    pub fn rotated_quarter(&self) -> FockState {
        let phases = [
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, -1.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(0.0, 1.0),
        ];
        FockState {
            amplitudes: self
                .amplitudes
                .iter()
                .enumerate()
                .map(|(n, a)| a * phases[n % 4])
                .collect(),
        }
    }

    pub fn projector(&self) -> DensityMatrix {
        let n = self.cutoff();
        let entries = DMatrix::from_fn(n, n, |i, j| self.amplitudes[i] * self.amplitudes[j].conj());
        DensityMatrix { entries }
    }

    pub fn to_json(&self) -> StateJson {
        StateJson {
            cutoff: self.cutoff(),
            amplitudes: self.amplitudes.iter().map(|a| [a.re, a.im]).collect(),
        }
    }

    pub fn from_json(json: &StateJson) -> Result<Self> {
        if json.amplitudes.len() != json.cutoff {
            return Err(TomoError::DimensionMismatch(format!(
                "cutoff {} but {} amplitudes",
                json.cutoff,
                json.amplitudes.len()
            )));
        }
        let amps: Vec<Complex64> = json
            .amplitudes
            .iter()
            .map(|[re, im]| Complex64::new(*re, *im))
            .collect();
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(TomoError::InvalidInput(format!(
                "state is not normalized (squared norm {norm})"
            )));
        }
        Self::new(amps)
    }
}

/// `{"cutoff": N, "amplitudes": [[re, im], ...]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateJson {
    pub cutoff: usize,
    pub amplitudes: Vec<[f64; 2]>,
}

// ── standard constructions ──────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardState {
    /// Weighted sum of Fock states, `Σ w_j |n_j⟩`, normalized afterwards.
    Superposition(Vec<(usize, [f64; 2])>),
    /// Coherent state `|α⟩` with `α = re + i im`.
    Coherent([f64; 2]),
}

/// Result of [`make_standard_state`]; `warning` is set when truncation lost
/// more weight than [`COHERENT_TRUNCATION_TOL`].
#[derive(Debug, Clone)]
pub struct Constructed {
    pub state: FockState,
    pub truncated_weight: f64,
    pub warning: Option<String>,
}

pub fn make_standard_state(spec: &StandardState, cutoff: usize) -> Result<Constructed> {
    if cutoff == 0 {
        return Err(TomoError::InvalidInput("cutoff must be >= 1".into()));
    }
    match spec {
        StandardState::Superposition(terms) => {
            if terms.is_empty() {
                return Err(TomoError::InvalidInput("empty superposition".into()));
            }
            let mut amps = vec![Complex64::new(0.0, 0.0); cutoff];
            for &(n, [re, im]) in terms {
                if n >= cutoff {
                    return Err(TomoError::IndexOutOfRange { index: n, cutoff });
                }
                amps[n] += Complex64::new(re, im);
            }
            Ok(Constructed {
                state: FockState::new(amps)?,
                truncated_weight: 0.0,
                warning: None,
            })
        }
        StandardState::Coherent([re, im]) => {
            let alpha = Complex64::new(*re, *im);
            // a_n = e^{-|α|²/2} α^n / √(n!) built by a_{n+1} = a_n α / √(n+1)
            let mut amps = Vec::with_capacity(cutoff);
            let mut a = Complex64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
            for n in 0..cutoff {
                amps.push(a);
                a = a * alpha / ((n + 1) as f64).sqrt();
            }
            let kept: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
            let truncated_weight = (1.0 - kept).max(0.0);
            let warning = (truncated_weight > COHERENT_TRUNCATION_TOL).then(|| {
                format!(
                    "coherent state |alpha|^2 = {:.3} loses weight {truncated_weight:.3e} at cutoff {cutoff}",
                    alpha.norm_sqr()
                )
            });
            Ok(Constructed {
                state: FockState::new(amps)?,
                truncated_weight,
                warning,
            })
        }
    }
}

// ── mixed states ────────────────────────────────────────────────────────────

/// Hermitian, unit-trace, positive semidefinite matrix `c_{n,m}` in the Fock
/// basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    entries: DMatrix<Complex64>,
}

impl DensityMatrix {
    /// Validates Hermiticity, trace and positivity.
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self> {
        let rho = Self::from_entries_unchecked(entries)?;
        rho.check_hermitian()?;
        let tr = rho.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(TomoError::InvalidInput(format!("trace is {tr}, expected 1")));
        }
        let min_eig = rho.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        if min_eig < -PSD_TOL {
            return Err(TomoError::InvalidInput(format!(
                "matrix is not positive semidefinite (eigenvalue {min_eig:e})"
            )));
        }
        Ok(rho)
    }

    /// Only checks the shape. Used for estimator output that may violate
    /// positivity before projection.
    pub fn from_entries_unchecked(entries: DMatrix<Complex64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.nrows() != entries.ncols() {
            return Err(TomoError::DimensionMismatch(format!(
                "density matrix must be square and non-empty (got {}x{})",
                entries.nrows(),
                entries.ncols()
            )));
        }
        Ok(Self { entries })
    }

    pub fn maximally_mixed(cutoff: usize) -> Result<Self> {
        if cutoff == 0 {
            return Err(TomoError::InvalidInput("cutoff must be >= 1".into()));
        }
        Ok(Self {
            entries: DMatrix::from_diagonal_element(cutoff, cutoff, Complex64::new(1.0 / cutoff as f64, 0.0)),
        })
    }

    fn check_hermitian(&self) -> Result<()> {
        let n = self.cutoff();
        for i in 0..n {
            for j in i..n {
                let d = (self.entries[(i, j)] - self.entries[(j, i)].conj()).norm();
                if d > HERMITIAN_TOL {
                    return Err(TomoError::InvalidInput(format!(
                        "matrix is not Hermitian at ({i}, {j}), deviation {d:e}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn cutoff(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, n: usize, m: usize) -> Complex64 {
        self.entries[(n, m)]
    }

    pub fn trace(&self) -> f64 {
        self.entries.diagonal().iter().map(|c| c.re).sum()
    }

    pub fn purity(&self) -> f64 {
        (&self.entries * &self.entries).trace().re
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.entries.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Clips negative eigenvalues to zero and renormalizes the trace.
    pub fn project_psd(&self) -> Result<Self> {
        let eig = self.entries.clone().symmetric_eigen();
        let clipped: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        if total <= 0.0 {
            return Err(TomoError::Numerical(
                "no positive eigenvalues left after clipping".into(),
            ));
        }
        let n = self.cutoff();
        let v = &eig.eigenvectors;
        let entries = DMatrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|l| v[(i, l)] * v[(j, l)].conj() * (clipped[l] / total))
                .sum::<Complex64>()
        });
        let mut rho = Self { entries };
        rho.symmetrize();
        Ok(rho)
    }

    /// Overwrites the lower triangle with the conjugate of the upper one and
    /// makes the diagonal real.
    fn symmetrize(&mut self) {
        let n = self.cutoff();
        for i in 0..n {
            self.entries[(i, i)].im = 0.0;
            for j in i + 1..n {
                self.entries[(j, i)] = self.entries[(i, j)].conj();
            }
        }
    }

    /// `ρ → e^{−iθ a†a} ρ e^{iθ a†a}`, i.e. `c_{n,m} → c_{n,m} e^{−i(n−m)θ}`.
    pub fn rotated(&self, theta: f64) -> Self {
        let n = self.cutoff();
        let entries = DMatrix::from_fn(n, n, |i, j| {
            self.entries[(i, j)] * Complex64::from_polar(1.0, -((i as f64) - (j as f64)) * theta)
        });
        Self { entries }
    }

    pub fn frobenius_distance(&self, other: &Self) -> Result<f64> {
        if self.cutoff() != other.cutoff() {
            return Err(TomoError::DimensionMismatch(format!(
                "cutoffs {} and {}",
                self.cutoff(),
                other.cutoff()
            )));
        }
        Ok((&self.entries - &other.entries).norm())
    }

    pub fn to_json(&self) -> DensityJson {
        let n = self.cutoff();
        DensityJson {
            cutoff: n,
            entries: (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| [self.entries[(i, j)].re, self.entries[(i, j)].im])
                        .collect()
                })
                .collect(),
        }
    }

    pub fn from_json(json: &DensityJson) -> Result<Self> {
        let n = json.cutoff;
        if json.entries.len() != n || json.entries.iter().any(|row| row.len() != n) {
            return Err(TomoError::DimensionMismatch(format!(
                "density matrix entries do not form a {n}x{n} array"
            )));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| {
            let [re, im] = json.entries[i][j];
            Complex64::new(re, im)
        }))
    }
}

/// `{"cutoff": N, "entries": [[[re, im], ...], ...]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityJson {
    pub cutoff: usize,
    pub entries: Vec<Vec<[f64; 2]>>,
}

/// Depolarizing channel `(1 − ε) ρ + ε I/d` with `d` the cutoff.
pub fn depolarize(rho: &DensityMatrix, eps: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(TomoError::InvalidInput(format!(
            "depolarizing probability {eps} outside [0, 1]"
        )));
    }
    let d = rho.cutoff();
    let mut entries = rho.entries.scale(1.0 - eps);
    for i in 0..d {
        entries[(i, i)] += Complex64::new(eps / d as f64, 0.0);
    }
    Ok(DensityMatrix { entries })
}

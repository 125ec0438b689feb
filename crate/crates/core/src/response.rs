//! Exact forward model: the probe signals an ideal (infinite-shot) experiment
//! would record.
//!
//! Every signal is a matrix element of the displacement operator
//! `e^{ikX + iqP} = e^{ikX} e^{iqP} e^{ikq/2} = D(γ)` with
//! `γ = (−q + ik)/√2`, evaluated in closed form through associated Laguerre
//! polynomials. `P_z^e + i P_z^o` is then `Tr[ρ D(γ)]`.

use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::statespace::{DensityMatrix, FockState};

/// Which quadrature the reconstructed wavefunction lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    #[default]
    Position,
    Momentum,
}

/// One probe preparation: coupling strengths folded into `k = 2gαt` and
/// `q = 2gβt`, plus the free-evolution phase `ωt₀` applied beforehand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSetting {
    pub k: f64,
    pub q: f64,
    omega_t0: f64,
    pub representation: Representation,
}

impl ExperimentSetting {
    pub fn new(k: f64, q: f64, omega_t0: f64, representation: Representation) -> Result<Self> {
        if !(k.is_finite() && q.is_finite() && omega_t0.is_finite()) {
            return Err(TomoError::InvalidInput(format!(
                "non-finite setting (k={k}, q={q}, omega_t0={omega_t0})"
            )));
        }
        let mut phase = omega_t0.rem_euclid(TAU);
        if phase >= TAU {
            phase = 0.0;
        }
        Ok(Self {
            k,
            q,
            omega_t0: phase,
            representation,
        })
    }

    pub fn plain(k: f64) -> Self {
        Self::new(k, 0.0, 0.0, Representation::Position).expect("finite k")
    }

    /// Free-evolution phase, canonicalized to `[0, 2π)`.
    pub fn omega_t0(&self) -> f64 {
        self.omega_t0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    /// `P_z^e`, `P_z^o` from a coupling along a single quadrature.
    Plain,
    /// `P̃_z^e`, `P̃_z^o` from the combined `αX + βP` coupling.
    Tilde,
}

/// Number of shots behind each sampled value, or `Exact` for the forward
/// model itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shots {
    Exact,
    Count(u64),
}

impl Shots {
    pub fn is_exact(&self) -> bool {
        matches!(self, Shots::Exact)
    }
}

impl std::fmt::Display for Shots {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shots::Exact => f.write_str("exact"),
            Shots::Count(n) => write!(f, "{n}"),
        }
    }
}

impl std::str::FromStr for Shots {
    type Err = TomoError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "exact" {
            return Ok(Shots::Exact);
        }
        s.parse::<u64>()
            .map(Shots::Count)
            .map_err(|_| TomoError::InvalidInput(format!("shots column must be \"exact\" or an integer, got {s:?}")))
    }
}

/// Probe signals sampled over an ordered list of settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSeries {
    settings: Vec<ExperimentSetting>,
    even: Vec<f64>,
    odd: Vec<f64>,
    shots: Shots,
    kind: SignalKind,
}

const CHAR_BOUND_TOL: f64 = 1e-12;

impl SignalSeries {
    pub fn new(
        settings: Vec<ExperimentSetting>,
        even: Vec<f64>,
        odd: Vec<f64>,
        shots: Shots,
        kind: SignalKind,
    ) -> Result<Self> {
        if even.len() != settings.len() || odd.len() != settings.len() {
            return Err(TomoError::DimensionMismatch(format!(
                "{} settings but {} even and {} odd values",
                settings.len(),
                even.len(),
                odd.len()
            )));
        }
        if kind == SignalKind::Plain && shots.is_exact() {
            for (i, (e, o)) in even.iter().zip(&odd).enumerate() {
                if e * e + o * o > 1.0 + CHAR_BOUND_TOL {
                    return Err(TomoError::UnphysicalSignal {
                        index: i,
                        value: (e * e + o * o).sqrt(),
                    });
                }
            }
        }
        Ok(Self {
            settings,
            even,
            odd,
            shots,
            kind,
        })
    }

    pub fn settings(&self) -> &[ExperimentSetting] {
        &self.settings
    }

    pub fn even(&self) -> &[f64] {
        &self.even
    }

    pub fn odd(&self) -> &[f64] {
        &self.odd
    }

    pub fn shots(&self) -> Shots {
        self.shots
    }

    pub fn kind(&self) -> SignalKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.settings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.settings.is_empty()
    }

    /// `P_z^e + i P_z^o` at each setting.
    pub fn complex_values(&self) -> Vec<Complex64> {
        self.even
            .iter()
            .zip(&self.odd)
            .map(|(&e, &o)| Complex64::new(e, o))
            .collect()
    }

    /// Writes `k,q,omega_t0,even,odd,shots` with a header row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let ctx = |source| TomoError::Csv {
            context: "writing signal series".into(),
            source,
        };
        w.write_record(["k", "q", "omega_t0", "even", "odd", "shots"])
            .map_err(ctx)?;
        let shots = self.shots.to_string();
        for ((s, e), o) in self.settings.iter().zip(&self.even).zip(&self.odd) {
            w.write_record([
                s.k.to_string(),
                s.q.to_string(),
                s.omega_t0.to_string(),
                e.to_string(),
                o.to_string(),
                shots.clone(),
            ])
            .map_err(ctx)?;
        }
        w.flush().map_err(|e| TomoError::Csv {
            context: "writing signal series".into(),
            source: e.into(),
        })
    }

    /// Reads the CSV written by [`SignalSeries::write_csv`]. The file does not
    /// record what kind of series it holds, so the caller supplies it.
    pub fn read_csv<R: Read>(reader: R, kind: SignalKind, representation: Representation) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r
            .headers()
            .map_err(|source| TomoError::Csv {
                context: "reading signal header".into(),
                source,
            })?
            .clone();
        let expected = ["k", "q", "omega_t0", "even", "odd", "shots"];
        if headers.iter().map(str::trim).ne(expected) {
            return Err(TomoError::InvalidInput(format!(
                "signal CSV header must be {}, got {}",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut settings = Vec::new();
        let mut even = Vec::new();
        let mut odd = Vec::new();
        let mut shots: Option<Shots> = None;
        for (row, record) in r.records().enumerate() {
            let line = row + 2;
            let record = record.map_err(|source| TomoError::Csv {
                context: format!("signal CSV line {line}"),
                source,
            })?;
            let num = |col: usize| -> Result<f64> {
                record[col].trim().parse::<f64>().map_err(|_| {
                    TomoError::InvalidInput(format!(
                        "signal CSV line {line}: column {} is not a number ({:?})",
                        expected[col], &record[col]
                    ))
                })
            };
            settings.push(ExperimentSetting::new(num(0)?, num(1)?, num(2)?, representation)?);
            even.push(num(3)?);
            odd.push(num(4)?);
            let s: Shots = record[5].parse()?;
            match shots {
                None => shots = Some(s),
                Some(prev) if prev != s => {
                    return Err(TomoError::InvalidInput(format!(
                        "signal CSV line {line}: shots {s} differs from earlier rows ({prev})"
                    )))
                }
                _ => {}
            }
        }
        Self::new(settings, even, odd, shots.unwrap_or(Shots::Exact), kind)
    }
}

// ── displacement operator ───────────────────────────────────────────────────

/// `L_n^{(α)}(x)` by the three-term recurrence.
fn assoc_laguerre(n: usize, alpha: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + alpha - x;
    for j in 1..n {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0 + alpha - x) * cur - (jf + alpha) * prev) / (jf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

fn gamma_of(k: f64, q: f64) -> Complex64 {
    Complex64::new(-q, k) / std::f64::consts::SQRT_2
}

/// `⟨m| e^{ikX} e^{iqP} e^{ikq/2} |n⟩`, the Fock matrix element of the
/// displacement `D(γ)`, `γ = (−q + ik)/√2`.
pub fn displacement_element(m: usize, n: usize, k: f64, q: f64) -> Complex64 {
    let gamma = gamma_of(k, q);
    let r2 = gamma.norm_sqr();
    let (lo, hi, base) = if m >= n { (n, m, gamma) } else { (m, n, -gamma.conj()) };
    // √(lo!/hi!) base^{hi−lo}
    let mut prefactor = Complex64::new(1.0, 0.0);
    for j in lo + 1..=hi {
        prefactor *= base / (j as f64).sqrt();
    }
    prefactor * (-0.5 * r2).exp() * assoc_laguerre(lo, (hi - lo) as f64, r2)
}

/// Full `cutoff × cutoff` block of `D(γ)`, entry `(m, n) = ⟨m|D|n⟩`.
pub fn displacement_matrix(cutoff: usize, k: f64, q: f64) -> DMatrix<Complex64> {
    let mut d = DMatrix::zeros(cutoff, cutoff);
    for m in 0..cutoff {
        for n in 0..=m {
            let v = displacement_element(m, n, k, q);
            d[(m, n)] = v;
            if m != n {
                d[(n, m)] = displacement_element(n, m, k, q);
            }
        }
    }
    d
}

/// States whose characteristic function `⟨e^{ikX + iqP}⟩` the probe samples.
pub trait Characteristic {
    fn cutoff(&self) -> usize;

    /// `⟨e^{ikX} e^{iqP}⟩ e^{ikq/2}`.
    fn characteristic(&self, k: f64, q: f64) -> Complex64;
}

impl Characteristic for FockState {
    fn cutoff(&self) -> usize {
        FockState::cutoff(self)
    }

    fn characteristic(&self, k: f64, q: f64) -> Complex64 {
        let a = self.amplitudes();
        let d = displacement_matrix(a.len(), k, q);
        let mut acc = Complex64::new(0.0, 0.0);
        for m in 0..a.len() {
            if a[m] == Complex64::new(0.0, 0.0) {
                continue;
            }
            let row: Complex64 = (0..a.len()).map(|n| d[(m, n)] * a[n]).sum();
            acc += a[m].conj() * row;
        }
        acc
    }
}

impl Characteristic for DensityMatrix {
    fn cutoff(&self) -> usize {
        DensityMatrix::cutoff(self)
    }

    fn characteristic(&self, k: f64, q: f64) -> Complex64 {
        let d = displacement_matrix(self.cutoff(), k, q);
        // Tr[ρ D] = Σ_{n,m} c_{n,m} ⟨m|D|n⟩
        let rho = self.entries();
        let mut acc = Complex64::new(0.0, 0.0);
        for n in 0..self.cutoff() {
            for m in 0..self.cutoff() {
                acc += rho[(n, m)] * d[(m, n)];
            }
        }
        acc
    }
}

/// `P_z^e(k) = ∫ cos(kx) ρ(x, x) dx`.
pub fn pz_even<S: Characteristic + ?Sized>(state: &S, k: f64) -> f64 {
    state.characteristic(k, 0.0).re
}

/// `P_z^o(k) = ∫ sin(kx) ρ(x, x) dx`.
pub fn pz_odd<S: Characteristic + ?Sized>(state: &S, k: f64) -> f64 {
    state.characteristic(k, 0.0).im
}

/// `(P̃_z^e, P̃_z^o)` for the combined coupling, exact to all orders in `q`.
pub fn pz_tilde(state: &FockState, k: f64, q: f64) -> (f64, f64) {
    let c = state.characteristic(k, q);
    (c.re, c.im)
}

/// `P_z^e` after free evolution by phase `ωt₀`.
pub fn pz_even_rotated(rho: &DensityMatrix, k: f64, phase: f64) -> f64 {
    pz_even(&rho.rotated(phase), k)
}

/// `P_z^o` after free evolution by phase `ωt₀`.
pub fn pz_odd_rotated(rho: &DensityMatrix, k: f64, phase: f64) -> f64 {
    pz_odd(&rho.rotated(phase), k)
}

/// Evaluates the forward model at every setting. Settings with a nonzero
/// `omega_t0` are applied to the rotated state.
pub fn exact_series<S: Characteristic + Rotate>(
    state: &S,
    settings: Vec<ExperimentSetting>,
    kind: SignalKind,
) -> Result<SignalSeries> {
    let mut even = Vec::with_capacity(settings.len());
    let mut odd = Vec::with_capacity(settings.len());
    let mut last_phase = None;
    let mut rotated = None;
    for s in &settings {
        if last_phase != Some(s.omega_t0()) {
            rotated = Some(state.rotate(s.omega_t0()));
            last_phase = Some(s.omega_t0());
        }
        let c = rotated.as_ref().expect("set above").characteristic(s.k, s.q);
        even.push(c.re);
        odd.push(c.im);
    }
    SignalSeries::new(settings, even, odd, Shots::Exact, kind)
}

/// Free evolution `e^{−iθ a†a}`.
pub trait Rotate: Sized {
    fn rotate(&self, theta: f64) -> Self;
}

impl Rotate for FockState {
    fn rotate(&self, theta: f64) -> Self {
        if theta == 0.0 {
            return self.clone();
        }
        let amps = self
            .amplitudes()
            .iter()
            .enumerate()
            .map(|(n, a)| a * Complex64::from_polar(1.0, -(n as f64) * theta))
            .collect();
        FockState::new(amps).expect("rotation preserves the norm")
    }
}

impl Rotate for DensityMatrix {
    fn rotate(&self, theta: f64) -> Self {
        self.rotated(theta)
    }
}

// ── schedules ───────────────────────────────────────────────────────────────

/// Non-negative measurement grid `k ∈ {0, Δk, …, K}`; negative values are
/// implied by parity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KGrid {
    pub k_max: f64,
    pub dk: f64,
}

impl Default for KGrid {
    fn default() -> Self {
        Self { k_max: 8.0, dk: 0.05 }
    }
}

impl KGrid {
    pub fn new(k_max: f64, dk: f64) -> Result<Self> {
        if !(k_max.is_finite() && dk.is_finite()) || k_max <= 0.0 || dk <= 0.0 || dk > k_max {
            return Err(TomoError::InvalidInput(format!(
                "k-grid needs 0 < dk <= k_max (got k_max={k_max}, dk={dk})"
            )));
        }
        Ok(Self { k_max, dk })
    }

    /// Number of intervals between 0 and `k_max`.
    pub fn intervals(&self) -> usize {
        (self.k_max / self.dk).round() as usize
    }

    pub fn points(&self) -> Vec<f64> {
        (0..=self.intervals()).map(|j| j as f64 * self.dk).collect()
    }
}

/// Settings of the single-quadrature measurement (`β = 0` in position, `α = 0`
/// in momentum).
pub fn plain_settings(grid: &KGrid, representation: Representation) -> Vec<ExperimentSetting> {
    grid.points()
        .into_iter()
        .map(|kappa| {
            let (k, q) = match representation {
                Representation::Position => (kappa, 0.0),
                Representation::Momentum => (0.0, kappa),
            };
            ExperimentSetting::new(k, q, 0.0, representation).expect("finite grid")
        })
        .collect()
}

/// Settings of the combined-coupling measurement at fixed ratio
/// `β/α = ratio`. In momentum representation the quadratures swap roles via
/// `X → P`, `P → −X`, so the weak coupling is `k = −ratio · q`.
pub fn tilde_settings(grid: &KGrid, ratio: f64, representation: Representation) -> Vec<ExperimentSetting> {
    grid.points()
        .into_iter()
        .map(|kappa| {
            let (k, q) = match representation {
                Representation::Position => (kappa, ratio * kappa),
                Representation::Momentum => (-ratio * kappa, kappa),
            };
            ExperimentSetting::new(k, q, 0.0, representation).expect("finite grid")
        })
        .collect()
}

/// `{jπ/(2N)}` for `j = 0 … 2N−1`.
pub fn default_rotation_schedule(cutoff: usize) -> Vec<f64> {
    (0..2 * cutoff).map(|j| j as f64 * PI / (2 * cutoff) as f64).collect()
}

/// Every `(ωt₀, k)` pair with `β = 0`, ordered by phase then by `k`.
pub fn rotated_settings(k_list: &[f64], phases: &[f64]) -> Result<Vec<ExperimentSetting>> {
    let mut out = Vec::with_capacity(k_list.len() * phases.len());
    for &phase in phases {
        for &k in k_list {
            out.push(ExperimentSetting::new(k, 0.0, phase, Representation::Position)?);
        }
    }
    Ok(out)
}

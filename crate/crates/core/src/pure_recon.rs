//! Pure-state reconstruction.
//!
//! Three stages, each usable on its own:
//!
//! 1. [`recover_density_profile`]: inverse Fourier transform of the plain
//!    characteristic function `P_z^e + i P_z^o` gives `|ψ(x)|²`.
//! 2. [`compute_g`]: the first-order difference between tilde and plain
//!    signals, divided by `q`, is the Fourier transform of
//!    `G(x) = ψ*(x) ∂_x ψ(x)`.
//! 3. [`integrate_phase`]: `ψ' = (G/|ψ|²) ψ` is integrated outward from the
//!    profile maximum. Each grid step advances the phase by the argument of
//!    `ψ_i* ψ_{i+1}`, estimated from `|ψ|²`, `G` and `G'` at both ends, which
//!    stays well conditioned through near-nodes where `G/|ψ|²` is too sharp
//!    for the grid.
//!
//! Momentum-space reconstruction runs the same code on the quarter-rotated
//! problem: with `X → P` and `P → −X`, a measurement at physical `(k, q)` is
//! a position-frame measurement at `(q, −k)`. Settings are therefore read
//! through a "conjugate variable" `κ` (the physical `k` in position mode, `q`
//! in momentum mode).

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::response::{
    exact_series, plain_settings, tilde_settings, ExperimentSetting, KGrid, Representation, Shots, SignalKind,
    SignalSeries,
};
use crate::statespace::{FockState, PositionGrid};

/// Characteristic-function magnitude at `K` above which the truncated
/// transform is flagged.
pub const TRUNCATION_THRESHOLD: f64 = 1e-3;

pub const DEFAULT_BETA_OVER_ALPHA: f64 = 0.5e-3;

/// Points with `|ψ|² < threshold · max|ψ|²` are excluded from the phase ODE.
pub const DEFAULT_NODE_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PureOptions {
    pub grid: PositionGrid,
    pub beta_over_alpha: f64,
    pub node_threshold: f64,
    pub representation: Representation,
}

impl Default for PureOptions {
    fn default() -> Self {
        Self {
            grid: PositionGrid::default(),
            beta_over_alpha: DEFAULT_BETA_OVER_ALPHA,
            node_threshold: DEFAULT_NODE_THRESHOLD,
            representation: Representation::Position,
        }
    }
}

/// `|ψ(x)|²` on a grid, with transform diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityProfile {
    pub grid: PositionGrid,
    pub values: Vec<f64>,
    /// Largest discarded imaginary part of the transform.
    pub imag_residue: f64,
    pub warnings: Vec<String>,
}

impl DensityProfile {
    /// Profile with no diagnostics, e.g. from a known wavefunction.
    pub fn from_values(grid: PositionGrid, values: Vec<f64>) -> Self {
        Self {
            grid,
            values,
            imag_residue: 0.0,
            warnings: Vec::new(),
        }
    }

    /// Trapezoidal integral of the profile.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.values, self.grid.dx())
    }

    /// Number of grid points with a negative value (noise excursions).
    pub fn negative_points(&self) -> usize {
        self.values.iter().filter(|&&v| v < 0.0).count()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Writes `x,abs2`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |source| TomoError::Csv {
            context: "writing density profile".into(),
            source,
        };
        w.write_record(["x", "abs2"]).map_err(err)?;
        for (x, v) in self.grid.points().zip(&self.values) {
            w.write_record([x.to_string(), v.to_string()]).map_err(err)?;
        }
        w.flush().map_err(|e| err(e.into()))
    }

    /// Reads `x,abs2`. Diagnostics are not stored in the file and come back
    /// empty.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r
            .headers()
            .map_err(|source| TomoError::Csv {
                context: "reading density header".into(),
                source,
            })?
            .clone();
        if headers.iter().map(str::trim).ne(["x", "abs2"]) {
            return Err(TomoError::InvalidInput("density CSV header must be x,abs2".into()));
        }
        let mut xs = Vec::new();
        let mut values = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let line = row + 2;
            let rec = rec.map_err(|source| TomoError::Csv {
                context: format!("density CSV line {line}"),
                source,
            })?;
            let num = |c: usize| -> Result<f64> {
                rec[c].trim().parse().map_err(|_| {
                    TomoError::InvalidInput(format!("density CSV line {line}: bad number in column {}", c + 1))
                })
            };
            xs.push(num(0)?);
            values.push(num(1)?);
        }
        Ok(Self {
            grid: grid_from_column(&xs, "density")?,
            values,
            imag_residue: 0.0,
            warnings: Vec::new(),
        })
    }
}

/// Complex wavefunction on a grid. `valid[i]` is false where the phase ODE was
/// not integrated; those points carry `√|ψ|²` with the phase of the nearest
/// valid neighbour.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexProfile {
    pub grid: PositionGrid,
    pub values: Vec<Complex64>,
    pub valid: Vec<bool>,
    /// Number of separately integrated segments (1 when there are no nodes).
    pub segments: usize,
}

impl ComplexProfile {
    /// Writes `x,re,im,abs2,valid`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |source| TomoError::Csv {
            context: "writing wavefunction profile".into(),
            source,
        };
        w.write_record(["x", "re", "im", "abs2", "valid"]).map_err(err)?;
        for ((x, v), ok) in self.grid.points().zip(&self.values).zip(&self.valid) {
            w.write_record([
                x.to_string(),
                v.re.to_string(),
                v.im.to_string(),
                v.norm_sqr().to_string(),
                (if *ok { "1" } else { "0" }).to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| err(e.into()))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let expected = ["x", "re", "im", "abs2", "valid"];
        let headers = r
            .headers()
            .map_err(|source| TomoError::Csv {
                context: "reading wavefunction header".into(),
                source,
            })?
            .clone();
        if headers.iter().map(str::trim).ne(expected) {
            return Err(TomoError::InvalidInput(format!(
                "wavefunction CSV header must be {}",
                expected.join(",")
            )));
        }
        let mut xs = Vec::new();
        let mut values = Vec::new();
        let mut valid = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let line = row + 2;
            let rec = rec.map_err(|source| TomoError::Csv {
                context: format!("wavefunction CSV line {line}"),
                source,
            })?;
            let num = |c: usize| -> Result<f64> {
                rec[c].trim().parse().map_err(|_| {
                    TomoError::InvalidInput(format!("wavefunction CSV line {line}: bad {} value", expected[c]))
                })
            };
            xs.push(num(0)?);
            values.push(Complex64::new(num(1)?, num(2)?));
            valid.push(match rec[4].trim() {
                "1" | "true" => true,
                "0" | "false" => false,
                other => {
                    return Err(TomoError::InvalidInput(format!(
                        "wavefunction CSV line {line}: valid must be 0 or 1, got {other:?}"
                    )))
                }
            });
        }
        let grid = grid_from_column(&xs, "wavefunction")?;
        Ok(Self {
            grid,
            values,
            valid,
            segments: 0,
        })
    }
}

fn grid_from_column(xs: &[f64], what: &str) -> Result<PositionGrid> {
    if xs.len() < 2 {
        return Err(TomoError::InvalidInput(format!("{what} CSV needs at least 2 rows")));
    }
    let grid = PositionGrid::new(xs[0], xs[xs.len() - 1], xs.len())?;
    let tol = 1e-9 * grid.dx().max(1.0);
    if xs.iter().enumerate().any(|(i, &x)| (x - grid.point(i)).abs() > tol) {
        return Err(TomoError::InvalidInput(format!("{what} CSV grid is not uniform")));
    }
    Ok(grid)
}

fn trapezoid(values: &[f64], dx: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dx * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1])),
    }
}

// ── conjugate-variable grid ─────────────────────────────────────────────────

fn conjugate_variable(s: &ExperimentSetting, representation: Representation) -> f64 {
    match representation {
        Representation::Position => s.k,
        Representation::Momentum => s.q,
    }
}

/// Checks that the series covers `κ ∈ {0, Δκ, …, K}` and returns the grid.
fn series_k_grid(series: &SignalSeries, representation: Representation) -> Result<KGrid> {
    if series.len() < 2 {
        return Err(TomoError::InvalidInput(
            "signal series needs at least two settings".into(),
        ));
    }
    let kappas: Vec<f64> = series
        .settings()
        .iter()
        .map(|s| conjugate_variable(s, representation))
        .collect();
    if kappas[0] != 0.0 {
        return Err(TomoError::InvalidInput(format!(
            "k-grid must start at 0 (negative k follows from parity), got {}",
            kappas[0]
        )));
    }
    let dk = kappas[1];
    if dk <= 0.0 {
        return Err(TomoError::InvalidInput("k-grid must be increasing".into()));
    }
    for (j, &k) in kappas.iter().enumerate() {
        if (k - j as f64 * dk).abs() > 1e-9 * dk.max(1.0) * (j as f64).max(1.0) {
            return Err(TomoError::InvalidInput(format!(
                "k-grid is not uniform: point {j} is {k}, expected {}",
                j as f64 * dk
            )));
        }
    }
    KGrid::new(dk * (kappas.len() - 1) as f64, dk)
}

fn check_aliasing(k: &KGrid, grid: &PositionGrid) -> Result<()> {
    let limit = PI / grid.extent();
    if k.dk > limit * (1.0 + 1e-12) {
        return Err(TomoError::Aliasing { dk: k.dk, limit });
    }
    Ok(())
}

/// `(1/2π) ∫_{−K}^{K} F(κ) e^{−iκx} dκ` by the trapezoid rule on
/// `κ_j = j Δκ`, `j = −M … M`. `positive[j]` and `negative[j]` hold `F(±κ_j)`
/// (entry 0 of `negative` is ignored).
fn inverse_fourier(dk: f64, positive: &[Complex64], negative: &[Complex64], grid: &PositionGrid) -> Vec<Complex64> {
    let m = positive.len() - 1;
    grid.points()
        .map(|x| {
            let mut acc = positive[0];
            for j in 1..=m {
                let w = if j == m { 0.5 } else { 1.0 };
                let kappa = j as f64 * dk;
                let (s, c) = (kappa * x).sin_cos();
                // e^{−iκx} and e^{+iκx}
                let minus = Complex64::new(c, -s);
                let plus = Complex64::new(c, s);
                acc += (positive[j] * minus + negative[j] * plus) * w;
            }
            acc * dk / (2.0 * PI)
        })
        .collect()
}

// ── stage 1 ─────────────────────────────────────────────────────────────────

/// `|ψ(x)|² = F⁻¹[P_z^e + i P_z^o]`.
pub fn recover_density_profile(
    series: &SignalSeries,
    grid: &PositionGrid,
    representation: Representation,
) -> Result<DensityProfile> {
    if series.kind() != SignalKind::Plain {
        return Err(TomoError::InvalidInput(
            "density recovery needs a plain signal series".into(),
        ));
    }
    let kgrid = series_k_grid(series, representation)?;
    check_aliasing(&kgrid, grid)?;
    let positive = series.complex_values();
    // P_z^e is even and P_z^o odd in κ
    let negative: Vec<Complex64> = positive.iter().map(|c| c.conj()).collect();

    let mut warnings = Vec::new();
    let tail = positive.last().expect("non-empty").norm();
    // Sampled tails sit at the shot-noise floor, |F| ~ √(2/n).
    let threshold = match series.shots() {
        Shots::Exact => TRUNCATION_THRESHOLD,
        Shots::Count(n) => TRUNCATION_THRESHOLD.max(4.0 / (n as f64).sqrt()),
    };
    if tail > threshold {
        warnings.push(format!(
            "characteristic function is still {tail:.2e} at k = {}; increase k_max",
            kgrid.k_max
        ));
    }
    let transform = inverse_fourier(kgrid.dk, &positive, &negative, grid);
    let imag_residue = transform.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    let values: Vec<f64> = transform.iter().map(|c| c.re).collect();
    let mut profile = DensityProfile {
        grid: *grid,
        values,
        imag_residue,
        warnings,
    };
    let neg = profile.negative_points();
    if neg > 0 && !series.shots().is_exact() {
        profile
            .warnings
            .push(format!("{neg} grid points have negative density (shot noise)"));
    }
    Ok(profile)
}

// ── stage 2 ─────────────────────────────────────────────────────────────────

/// `G(x) = ψ*(x) ∂_x ψ(x)` on `grid`, to first order in `β/α`.
pub fn compute_g(
    plain: &SignalSeries,
    tilde: &SignalSeries,
    beta_over_alpha: f64,
    grid: &PositionGrid,
    representation: Representation,
) -> Result<Vec<Complex64>> {
    if !(beta_over_alpha.is_finite() && beta_over_alpha != 0.0) {
        return Err(TomoError::InvalidInput(format!(
            "beta_over_alpha must be finite and nonzero (got {beta_over_alpha})"
        )));
    }
    if plain.kind() != SignalKind::Plain || tilde.kind() != SignalKind::Tilde {
        return Err(TomoError::InvalidInput(
            "compute_g needs one plain and one tilde series".into(),
        ));
    }
    let kgrid = series_k_grid(plain, representation)?;
    let tgrid = series_k_grid(tilde, representation)?;
    if plain.len() != tilde.len() || (kgrid.dk - tgrid.dk).abs() > 1e-12 * kgrid.dk {
        return Err(TomoError::DimensionMismatch(
            "plain and tilde series are on different k-grids".into(),
        ));
    }
    if plain.len() < 4 {
        return Err(TomoError::InvalidInput("compute_g needs at least 4 k-points".into()));
    }
    check_aliasing(&kgrid, grid)?;
    for s in tilde.settings() {
        let (kappa, weak) = match representation {
            Representation::Position => (s.k, s.q),
            Representation::Momentum => (s.q, -s.k),
        };
        let expected = beta_over_alpha * kappa;
        if (weak - expected).abs() > 1e-9 * expected.abs().max(1e-12) {
            return Err(TomoError::InvalidInput(format!(
                "tilde setting at k = {kappa} has weak coupling {weak}, expected beta_over_alpha * k = {expected}"
            )));
        }
    }

    let c = plain.complex_values();
    let t = tilde.complex_values();
    let m = c.len() - 1;
    let mut positive = vec![Complex64::new(0.0, 0.0); m + 1];
    let mut negative = vec![Complex64::new(0.0, 0.0); m + 1];
    for j in 1..=m {
        let kappa = j as f64 * kgrid.dk;
        let q = beta_over_alpha * kappa;
        let bch = Complex64::from_polar(1.0, -0.5 * kappa * q);
        positive[j] = (t[j] * bch - c[j]) / q;
        // both signals at (−κ, −q) are complex conjugates of those at (κ, q)
        negative[j] = (t[j].conj() * bch - c[j].conj()) / (-q);
    }
    // removable 0/0 at κ = 0
    positive[0] = positive[1] * 3.0 - positive[2] * 3.0 + positive[3];
    negative[0] = positive[0];
    Ok(inverse_fourier(kgrid.dk, &positive, &negative, grid))
}

// ── stage 3 ─────────────────────────────────────────────────────────────────

fn unit(c: Complex64) -> Complex64 {
    let n = c.norm();
    if n > 0.0 && n.is_finite() {
        c / n
    } else {
        Complex64::new(1.0, 0.0)
    }
}

/// Data available at one grid point: `|ψ|²`, `G = ψ*ψ'` and `G'`.
#[derive(Clone, Copy)]
struct Sample {
    p: f64,
    g: Complex64,
    slope: Complex64,
}

impl Sample {
    /// `ψ*ψ'' = G' − |ψ'|²` with `|ψ'|² = |G|²/|ψ|²`.
    fn curvature(&self) -> Complex64 {
        self.slope - self.g.norm_sqr() / self.p
    }
}

/// Estimate of `ψ_a* ψ_b` for points `h = x_b − x_a` apart, averaging the
/// second-order Taylor expansions from either end. Needs no division by `|ψ|²`
/// beyond the curvature term, so it stays usable next to nodes.
fn overlap(a: Sample, b: Sample, h: f64) -> Complex64 {
    let from_a = a.p + a.g * h + a.curvature() * (0.5 * h * h);
    let from_b = b.p - b.g * h + b.curvature() * (0.5 * h * h);
    (from_a + from_b.conj()) * 0.5
}

fn sample(g: &[Complex64], profile: &[f64], dx: f64, i: usize) -> Sample {
    let n = g.len();
    let slope = match i {
        0 => (g[1] - g[0]) / dx,
        i if i + 1 == n => (g[i] - g[i - 1]) / dx,
        i => (g[i + 1] - g[i - 1]) / (2.0 * dx),
    };
    Sample {
        p: profile[i],
        g: g[i],
        slope,
    }
}

/// Integrates one contiguous valid segment `[start, end]` from its largest
/// profile point, anchored real and positive there. Each step advances the
/// phase by the argument of the estimated overlap between neighbours and sets
/// the magnitude to `√|ψ|²`.
fn integrate_segment(g: &[Complex64], profile: &[f64], span: (usize, usize), dx: f64, out: &mut [Complex64]) {
    let (start, end) = span;
    let anchor = (start..=end)
        .max_by(|&a, &b| profile[a].total_cmp(&profile[b]))
        .expect("non-empty segment");
    out[anchor] = Complex64::new(profile[anchor].sqrt(), 0.0);
    let step = |out: &[Complex64], a: usize, b: usize, h: f64| {
        let z = overlap(sample(g, profile, dx, a), sample(g, profile, dx, b), h);
        unit(out[a]) * unit(z) * profile[b].sqrt()
    };
    for i in anchor..end {
        out[i + 1] = step(out, i, i + 1, dx);
    }
    for i in (start + 1..=anchor).rev() {
        out[i - 1] = step(out, i, i - 1, -dx);
    }
}

/// A masked gap is crossed step by step when its profile stays above this
/// fraction of the mask cut (a shallow minimum); deeper gaps are crossed in
/// one step.
const CHAIN_FLOOR: f64 = 0.5;

/// Unit factor `e^{iθ}` that puts the segment containing `b` in phase with the
/// solved point `a` across a masked gap: `arg ψ_b` must exceed `arg ψ_a` by
/// the argument of `ψ_a* ψ_b`. When `|ψ|²` stays above `floor` inside the gap
/// the overlap is accumulated grid step by grid step; otherwise a single step
/// spans the gap.
fn junction_phase(
    g: &[Complex64],
    profile: &[f64],
    dx: f64,
    psi: &[Complex64],
    a: usize,
    b: usize,
    floor: f64,
) -> Complex64 {
    let (lo, hi) = (a.min(b), a.max(b));
    let chained = if profile[lo + 1..hi].iter().all(|&p| p > floor) {
        let dir = if b > a { 1.0 } else { -1.0 };
        let idx: Vec<usize> = if b > a {
            (a..=b).collect()
        } else {
            (b..=a).rev().collect()
        };
        idx.windows(2)
            .map(|w| {
                unit(overlap(
                    sample(g, profile, dx, w[0]),
                    sample(g, profile, dx, w[1]),
                    dir * dx,
                ))
            })
            .try_fold(Complex64::new(1.0, 0.0), |acc, z| {
                let next = acc * z;
                (next.re.is_finite() && next.im.is_finite()).then_some(next)
            })
    } else {
        None
    };
    let step = chained.unwrap_or_else(|| {
        let h = (b as f64 - a as f64) * dx;
        unit(overlap(sample(g, profile, dx, a), sample(g, profile, dx, b), h))
    });
    unit(psi[a]) * step * unit(psi[b]).conj()
}

/// Solves `ψ' = (G/|ψ|²) ψ` outward from the profile maximum.
pub fn integrate_phase(g: &[Complex64], profile: &DensityProfile, node_threshold: f64) -> Result<ComplexProfile> {
    let n = profile.values.len();
    if g.len() != n {
        return Err(TomoError::DimensionMismatch(format!(
            "G has {} points, profile has {n}",
            g.len()
        )));
    }
    if !(0.0..1.0).contains(&node_threshold) {
        return Err(TomoError::InvalidInput(format!(
            "node_threshold {node_threshold} outside [0, 1)"
        )));
    }
    let peak = profile.max_value();
    if !(peak.is_finite() && peak > 0.0) {
        return Err(TomoError::Numerical("density profile has no positive values".into()));
    }
    let cut = node_threshold * peak;
    let valid: Vec<bool> = profile.values.iter().map(|&v| v > cut && v > 0.0).collect();

    for i in (0..n).filter(|&i| valid[i]) {
        let f = g[i] / profile.values[i];
        if !(f.re.is_finite() && f.im.is_finite()) {
            return Err(TomoError::Numerical(format!(
                "non-finite log-derivative at grid point {i}"
            )));
        }
    }

    // maximal runs of valid points
    let mut segments: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < n {
        if valid[i] {
            let start = i;
            while i + 1 < n && valid[i + 1] {
                i += 1;
            }
            segments.push((start, i));
        }
        i += 1;
    }
    let main = segments
        .iter()
        .position(|&(s, e)| (s..=e).any(|j| profile.values[j] == peak))
        .expect("peak lies in a valid segment");

    let dx = profile.grid.dx();
    let mut psi = vec![Complex64::new(0.0, 0.0); n];
    let (s, e) = segments[main];
    integrate_segment(g, &profile.values, (s, e), dx, &mut psi);
    for idx in main + 1..segments.len() {
        let (s, e) = segments[idx];
        let a = segments[idx - 1].1;
        integrate_segment(g, &profile.values, (s, e), dx, &mut psi);
        let phase = junction_phase(g, &profile.values, dx, &psi, a, s, CHAIN_FLOOR * cut);
        psi[s..=e].iter_mut().for_each(|v| *v *= phase);
    }
    for idx in (0..main).rev() {
        let (s, e) = segments[idx];
        let a = segments[idx + 1].0;
        integrate_segment(g, &profile.values, (s, e), dx, &mut psi);
        let phase = junction_phase(g, &profile.values, dx, &psi, a, e, CHAIN_FLOOR * cut);
        psi[s..=e].iter_mut().for_each(|v| *v *= phase);
    }

    // masked points: magnitude from the profile, phase from the nearest valid point
    let mut nearest: Option<usize> = None;
    let mut left_valid = vec![None; n];
    for i in 0..n {
        if valid[i] {
            nearest = Some(i);
        }
        left_valid[i] = nearest;
    }
    nearest = None;
    for i in (0..n).rev() {
        if valid[i] {
            nearest = Some(i);
            continue;
        }
        let pick = match (left_valid[i], nearest) {
            (Some(l), Some(r)) => Some(if i - l <= r - i { l } else { r }),
            (l, r) => l.or(r),
        };
        let mag = profile.values[i].max(0.0).sqrt();
        let phase = pick
            .map(|j| psi[j] / psi[j].norm())
            .filter(|p| p.re.is_finite())
            .unwrap_or(Complex64::new(1.0, 0.0));
        psi[i] = phase * mag;
    }

    Ok(ComplexProfile {
        grid: profile.grid,
        values: psi,
        valid,
        segments: segments.len(),
    })
}

// ── orchestration ───────────────────────────────────────────────────────────

/// Intermediate and final products of the pure-state pipeline.
#[derive(Debug, Clone)]
pub struct PureReconstruction {
    pub density: DensityProfile,
    pub g: Option<Vec<Complex64>>,
    pub wavefunction: Option<ComplexProfile>,
}

/// Exact plain and tilde series for `state` on `kgrid`.
pub fn exact_pure_series(
    state: &FockState,
    kgrid: &KGrid,
    beta_over_alpha: f64,
    representation: Representation,
) -> Result<(SignalSeries, SignalSeries)> {
    let plain = exact_series(state, plain_settings(kgrid, representation), SignalKind::Plain)?;
    let tilde = exact_series(
        state,
        tilde_settings(kgrid, beta_over_alpha, representation),
        SignalKind::Tilde,
    )?;
    Ok((plain, tilde))
}

/// Runs density recovery and, when a tilde series is supplied, the phase
/// stages. The output grid is in `x` or `p` according to
/// `options.representation`.
pub fn reconstruct_pure(
    plain: &SignalSeries,
    tilde: Option<&SignalSeries>,
    options: &PureOptions,
) -> Result<PureReconstruction> {
    for s in plain
        .settings()
        .iter()
        .chain(tilde.map(|t| t.settings()).unwrap_or(&[]))
    {
        if s.representation != options.representation {
            return Err(TomoError::InvalidInput(format!(
                "series recorded for {:?} representation, reconstruction requested in {:?}",
                s.representation, options.representation
            )));
        }
    }
    let density = recover_density_profile(plain, &options.grid, options.representation)?;
    let Some(tilde) = tilde else {
        return Ok(PureReconstruction {
            density,
            g: None,
            wavefunction: None,
        });
    };
    let g = compute_g(
        plain,
        tilde,
        options.beta_over_alpha,
        &options.grid,
        options.representation,
    )?;
    let wavefunction = integrate_phase(&g, &density, options.node_threshold)?;
    Ok(PureReconstruction {
        density,
        g: Some(g),
        wavefunction: Some(wavefunction),
    })
}

// ── metrics ─────────────────────────────────────────────────────────────────

/// Errors of a reconstructed wavefunction against a reference, after removing
/// the best global phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileErrors {
    pub sup: f64,
    pub l2: f64,
    /// `√∫(|ψ_rec|² − |ψ_ref|²)² dx`, phase independent.
    pub density_l2: f64,
    pub points: usize,
}

/// Compares `rec` with `reference(x)` on valid points with `|x| <= window`.
pub fn compare_wavefunction<F>(rec: &ComplexProfile, reference: F, window: Option<f64>) -> Result<ProfileErrors>
where
    F: Fn(f64) -> Complex64,
{
    let dx = rec.grid.dx();
    let pts: Vec<(Complex64, Complex64)> = rec
        .grid
        .points()
        .zip(&rec.values)
        .zip(&rec.valid)
        .filter(|((x, _), ok)| **ok && window.is_none_or(|w| x.abs() <= w))
        .map(|((x, v), _)| (*v, reference(x)))
        .collect();
    if pts.is_empty() {
        return Err(TomoError::InvalidInput("no valid points to compare".into()));
    }
    let overlap: Complex64 = pts.iter().map(|(r, t)| r.conj() * t).sum();
    let phase = if overlap.norm() > 0.0 {
        overlap / overlap.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    let mut sup: f64 = 0.0;
    let mut sq = 0.0;
    let mut dsq = 0.0;
    for (r, t) in &pts {
        let d = (r * phase - t).norm();
        sup = sup.max(d);
        sq += d * d;
        dsq += (r.norm_sqr() - t.norm_sqr()).powi(2);
    }
    Ok(ProfileErrors {
        sup,
        l2: (sq * dx).sqrt(),
        density_l2: (dsq * dx).sqrt(),
        points: pts.len(),
    })
}

/// `√∫(a − b)² dx` for two density profiles on the same grid.
pub fn density_l2_distance(a: &DensityProfile, b: &[f64]) -> Result<f64> {
    if a.values.len() != b.len() {
        return Err(TomoError::DimensionMismatch("profiles on different grids".into()));
    }
    let sq: Vec<f64> = a.values.iter().zip(b).map(|(x, y)| (x - y).powi(2)).collect();
    Ok(trapezoid(&sq, a.grid.dx()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statespace::hermite_wavefunction;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn fig1() -> FockState {
        FockState::new(vec![c(1.0, 0.0), c(0.0, 1.0), c(0.0, 0.0), c(0.0, 0.0)]).unwrap()
    }

    fn kgrid() -> KGrid {
        KGrid::default()
    }

    #[test]
    fn vacuum_density_profile() {
        let vac = FockState::vacuum(4).unwrap();
        let (plain, _) = exact_pure_series(&vac, &kgrid(), 1e-3, Representation::Position).unwrap();
        let grid = PositionGrid::default();
        let prof = recover_density_profile(&plain, &grid, Representation::Position).unwrap();
        let sup = grid
            .points()
            .zip(&prof.values)
            .map(|(x, v)| (v - (-x * x).exp() / PI.sqrt()).abs())
            .fold(0.0, f64::max);
        assert!(sup < 1e-6, "sup {sup}");
        assert!(prof.imag_residue < 1e-12);
        assert!(prof.warnings.is_empty());
        assert!((prof.integral() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn fig1_density_profile() {
        let (plain, _) = exact_pure_series(&fig1(), &kgrid(), 1e-3, Representation::Position).unwrap();
        let grid = PositionGrid::default();
        let prof = recover_density_profile(&plain, &grid, Representation::Position).unwrap();
        for (x, v) in grid.points().zip(&prof.values) {
            let expected =
                0.5 * (hermite_wavefunction(0, x).unwrap().powi(2) + hermite_wavefunction(1, x).unwrap().powi(2));
            assert!((v - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn coarse_k_grid_rejected() {
        let (plain, _) =
            exact_pure_series(&fig1(), &KGrid::new(8.0, 0.5).unwrap(), 1e-3, Representation::Position).unwrap();
        let err = recover_density_profile(&plain, &PositionGrid::default(), Representation::Position).unwrap_err();
        assert!(matches!(err, TomoError::Aliasing { .. }));
    }

    #[test]
    fn short_k_range_warns() {
        let vac = FockState::vacuum(2).unwrap();
        let (plain, _) =
            exact_pure_series(&vac, &KGrid::new(2.0, 0.05).unwrap(), 1e-3, Representation::Position).unwrap();
        let prof = recover_density_profile(&plain, &PositionGrid::default(), Representation::Position).unwrap();
        assert_eq!(prof.warnings.len(), 1);
    }

    #[test]
    fn vacuum_g_matches_derivative() {
        let vac = FockState::vacuum(4).unwrap();
        let ratio = 1e-3;
        let (plain, tilde) = exact_pure_series(&vac, &kgrid(), ratio, Representation::Position).unwrap();
        let grid = PositionGrid::default();
        let g = compute_g(&plain, &tilde, ratio, &grid, Representation::Position).unwrap();
        for (x, gv) in grid.points().zip(&g) {
            let expected = -x * (-x * x).exp() / PI.sqrt();
            assert!((gv - c(expected, 0.0)).norm() < 5e-3, "x {x}: {gv} vs {expected}");
        }
    }

    #[test]
    fn g_imaginary_part_integrates_to_mean_momentum() {
        // ⟨P⟩ = i/√2 (⟨a†⟩ − ⟨a⟩) with ⟨a⟩ = conj(a_0) a_1 = i/2.
        let s = fig1();
        let a = s.amplitudes();
        let mean_a = a[0].conj() * a[1];
        let mean_p = (c(0.0, 1.0) / 2f64.sqrt() * (mean_a.conj() - mean_a)).re;
        assert!((mean_p - 1.0 / 2f64.sqrt()).abs() < 1e-15);

        let (plain, tilde) = exact_pure_series(&s, &kgrid(), 0.5e-3, Representation::Position).unwrap();
        let grid = PositionGrid::default();
        let g = compute_g(&plain, &tilde, 0.5e-3, &grid, Representation::Position).unwrap();
        let im: Vec<f64> = g.iter().map(|v| v.im).collect();
        assert!((trapezoid(&im, grid.dx()) - mean_p).abs() < 1e-4);
    }

    #[test]
    fn g_rejects_bad_ratio_and_mismatch() {
        let (plain, tilde) = exact_pure_series(&fig1(), &kgrid(), 1e-3, Representation::Position).unwrap();
        let grid = PositionGrid::default();
        assert!(compute_g(&plain, &tilde, 0.0, &grid, Representation::Position).is_err());
        assert!(compute_g(&plain, &tilde, 2e-3, &grid, Representation::Position).is_err());
        let (short, _) =
            exact_pure_series(&fig1(), &KGrid::new(4.0, 0.05).unwrap(), 1e-3, Representation::Position).unwrap();
        assert!(matches!(
            compute_g(&short, &tilde, 1e-3, &grid, Representation::Position),
            Err(TomoError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn vacuum_wavefunction_is_real_gaussian() {
        // The first-order expansion leaves a phase error of about
        // (β/α)/2 · (2x² − x⁴/2) for the vacuum, so use a small ratio here.
        let vac = FockState::vacuum(4).unwrap();
        let opts = PureOptions {
            beta_over_alpha: 1e-4,
            ..PureOptions::default()
        };
        let (plain, tilde) = exact_pure_series(&vac, &kgrid(), opts.beta_over_alpha, opts.representation).unwrap();
        let rec = reconstruct_pure(&plain, Some(&tilde), &opts).unwrap();
        let psi = rec.wavefunction.unwrap();
        assert_eq!(psi.segments, 1);
        for ((x, v), ok) in psi.grid.points().zip(&psi.values).zip(&psi.valid) {
            if x.abs() <= 4.0 && *ok {
                let exact = PI.powf(-0.25) * (-x * x / 2.0).exp();
                assert!((v - c(exact, 0.0)).norm() < 1e-4, "x {x}: {v}");
            }
        }
    }

    #[test]
    fn integrate_phase_on_analytic_inputs() {
        // Feed exact |ψ|² and ψ*ψ' for a complex state; the ODE alone must
        // reproduce ψ up to a global phase.
        let s = FockState::new(vec![c(0.6, 0.1), c(0.2, -0.5), c(-0.3, 0.2), c(0.0, 0.4)]).unwrap();
        let grid = PositionGrid::new(-6.0, 6.0, 1201).unwrap();
        let values: Vec<f64> = grid.points().map(|x| s.position_amplitude(x).norm_sqr()).collect();
        let g: Vec<Complex64> = grid
            .points()
            .map(|x| s.position_amplitude(x).conj() * s.position_derivative(x))
            .collect();
        let prof = DensityProfile {
            grid,
            values,
            imag_residue: 0.0,
            warnings: vec![],
        };
        let psi = integrate_phase(&g, &prof, 1e-4).unwrap();
        let err = compare_wavefunction(&psi, |x| s.position_amplitude(x), None).unwrap();
        assert!(err.sup < 1e-4, "{err:?}");
    }

    #[test]
    fn node_segments_are_stitched() {
        // |1⟩ vanishes at the origin; both lobes are integrated separately and
        // the junction must recover the sign flip.
        let s = FockState::number(1, 3).unwrap();
        let grid = PositionGrid::new(-6.0, 6.0, 1200).unwrap();
        let values: Vec<f64> = grid.points().map(|x| s.position_amplitude(x).norm_sqr()).collect();
        let g: Vec<Complex64> = grid
            .points()
            .map(|x| s.position_amplitude(x).conj() * s.position_derivative(x))
            .collect();
        let prof = DensityProfile {
            grid,
            values,
            imag_residue: 0.0,
            warnings: vec![],
        };
        let psi = integrate_phase(&g, &prof, 1e-4).unwrap();
        assert_eq!(psi.segments, 2);
        let err = compare_wavefunction(&psi, |x| s.position_amplitude(x), Some(4.0)).unwrap();
        assert!(err.sup < 1e-3, "{err:?}");
    }

    #[test]
    fn integrate_phase_errors() {
        let grid = PositionGrid::new(-1.0, 1.0, 5).unwrap();
        let prof = DensityProfile {
            grid,
            values: vec![0.0; 5],
            imag_residue: 0.0,
            warnings: vec![],
        };
        assert!(matches!(
            integrate_phase(&[c(0.0, 0.0); 5], &prof, 1e-4),
            Err(TomoError::Numerical(_))
        ));
        assert!(integrate_phase(&[c(0.0, 0.0); 4], &prof, 1e-4).is_err());
    }

    #[test]
    fn momentum_vacuum() {
        let vac = FockState::vacuum(4).unwrap();
        let opts = PureOptions {
            representation: Representation::Momentum,
            beta_over_alpha: 1e-4,
            ..PureOptions::default()
        };
        let (plain, tilde) = exact_pure_series(&vac, &kgrid(), opts.beta_over_alpha, opts.representation).unwrap();
        let rec = reconstruct_pure(&plain, Some(&tilde), &opts).unwrap();
        let err = compare_wavefunction(
            rec.wavefunction.as_ref().unwrap(),
            |p| c(PI.powf(-0.25) * (-p * p / 2.0).exp(), 0.0),
            Some(4.0),
        )
        .unwrap();
        assert!(err.sup < 1e-4, "{err:?}");
    }

    #[test]
    fn momentum_density_of_real_superposition() {
        // ψ̃_n = (−i)^n ψ_n: |ψ̃(p)|² of (|0⟩+|1⟩)/√2 equals |ψ(x)|² of
        // (|0⟩+i|1⟩)/√2 at x = p.
        let s = FockState::new(vec![c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        let (plain, _) = exact_pure_series(&s, &kgrid(), 1e-3, Representation::Momentum).unwrap();
        let grid = PositionGrid::default();
        let prof = recover_density_profile(&plain, &grid, Representation::Momentum).unwrap();
        let fig1_like = FockState::new(vec![c(1.0, 0.0), c(0.0, 1.0)]).unwrap();
        for (p, v) in grid.points().zip(&prof.values) {
            assert!((v - fig1_like.position_amplitude(p).norm_sqr()).abs() < 1e-6);
        }
    }

    #[test]
    fn representation_mismatch_rejected() {
        let (plain, tilde) = exact_pure_series(&fig1(), &kgrid(), 1e-3, Representation::Position).unwrap();
        let opts = PureOptions {
            representation: Representation::Momentum,
            beta_over_alpha: 1e-3,
            ..PureOptions::default()
        };
        assert!(reconstruct_pure(&plain, Some(&tilde), &opts).is_err());
    }

    #[test]
    fn profile_csv_round_trip() {
        let vac = FockState::vacuum(2).unwrap();
        let grid = PositionGrid::new(-2.0, 2.0, 9).unwrap();
        let prof = ComplexProfile {
            grid,
            values: grid.points().map(|x| vac.position_amplitude(x)).collect(),
            valid: vec![true; 9],
            segments: 1,
        };
        let mut buf = Vec::new();
        prof.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,re,im,abs2,valid\n"));
        let back = ComplexProfile::read_csv(&buf[..]).unwrap();
        assert_eq!(back.values, prof.values);
        assert_eq!(back.valid, prof.valid);

        let density = DensityProfile {
            grid,
            values: prof.values.iter().map(|v| v.norm_sqr()).collect(),
            imag_residue: 0.0,
            warnings: Vec::new(),
        };
        let mut buf = Vec::new();
        density.write_csv(&mut buf).unwrap();
        assert_eq!(DensityProfile::read_csv(&buf[..]).unwrap(), density);
        assert!(DensityProfile::read_csv(&b"x,abs2\n0,1\n0.5,1\n2,1\n"[..]).is_err());
    }
}

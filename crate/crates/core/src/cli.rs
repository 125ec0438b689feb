//! Manifest-driven pipeline behind the `probe-tomo` binary.
//!
//! A run manifest names a state, a measurement schedule, an optional shot
//! model and reconstruction options. `simulate` writes signal CSVs,
//! `reconstruct` reads them back and writes profiles or a density matrix
//! plus metrics against the manifest state, `compare` scores any
//! reconstruction file against a reference, and `full-run` does simulate and
//! reconstruct in one go.
//!
//! Every output set is computed in memory first and written only after all
//! target paths have been checked, so a failing run leaves no partial files.
//! Relative paths inside a manifest are resolved against the manifest's
//! directory.

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::experiment::{debias, sample_signal, ShotConfig};
use crate::mixed_recon::{
    build_design_for_settings, default_k_list, fidelity, solve_density_matrix, Ridge, SolveOptions, SolverReport,
};
use crate::pure_recon::{
    compare_wavefunction, density_l2_distance, reconstruct_pure, ComplexProfile, DensityProfile, ProfileErrors,
    PureOptions, DEFAULT_BETA_OVER_ALPHA, DEFAULT_NODE_THRESHOLD,
};
use crate::response::{
    default_rotation_schedule, exact_series, plain_settings, rotated_settings, tilde_settings, ExperimentSetting,
    KGrid, Representation, SignalKind, SignalSeries,
};
use crate::statespace::{
    depolarize, hermite_functions, make_standard_state, DensityJson, DensityMatrix, FockState, PositionGrid,
    StandardState, StateJson, DEFAULT_CUTOFF,
};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const PLAIN_EXACT: &str = "plain_exact.csv";
pub const TILDE_EXACT: &str = "tilde_exact.csv";
pub const PLAIN_SAMPLED: &str = "plain_sampled.csv";
pub const TILDE_SAMPLED: &str = "tilde_sampled.csv";
pub const SIGNALS_EXACT: &str = "signals_exact.csv";
pub const SIGNALS_SAMPLED: &str = "signals_sampled.csv";
pub const TRUTH: &str = "truth.json";
pub const PROVENANCE: &str = "provenance.json";
pub const DENSITY: &str = "density.csv";
pub const PSI: &str = "psi.csv";
pub const RHO: &str = "rho.json";
pub const SOLVER_REPORT: &str = "solver_report.json";
pub const METRICS: &str = "metrics.json";
pub const COMPARE: &str = "compare.json";

/// Maps an error onto the process exit code.
pub fn exit_code(err: &TomoError) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

// ── manifest ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSource {
    Standard(StandardState),
    /// Path to a `{"cutoff", "amplitudes"}` file.
    StateFile(PathBuf),
    /// Path to a `{"cutoff", "entries"}` file.
    DensityFile(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        let g = PositionGrid::default();
        Self {
            x_min: g.x_min(),
            x_max: g.x_max(),
            n_points: g.len(),
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<PositionGrid> {
        PositionGrid::new(self.x_min, self.x_max, self.n_points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PureSchedule {
    #[serde(default = "default_k_max")]
    pub k_max: f64,
    #[serde(default = "default_dk")]
    pub dk: f64,
    #[serde(default = "default_beta_over_alpha")]
    pub beta_over_alpha: f64,
    /// Also record the combined-coupling series needed for the phase.
    #[serde(default = "yes")]
    pub tilde: bool,
    #[serde(default)]
    pub representation: Representation,
}

fn default_k_max() -> f64 {
    KGrid::default().k_max
}

fn default_dk() -> f64 {
    KGrid::default().dk
}

fn default_beta_over_alpha() -> f64 {
    DEFAULT_BETA_OVER_ALPHA
}

fn default_node_threshold() -> f64 {
    DEFAULT_NODE_THRESHOLD
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MixedSchedule {
    /// Defaults to 40 points spanning `[0, 6]`.
    #[serde(default)]
    pub k_list: Option<Vec<f64>>,
    /// Free-evolution phases; defaults to `{jπ/(2N)}`, `j < 2N`.
    #[serde(default)]
    pub t0_list: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Pure(PureSchedule),
    Mixed(MixedSchedule),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionSpec {
    pub grid: GridSpec,
    #[serde(default = "default_node_threshold")]
    pub node_threshold: f64,
    /// Recover the phase; defaults to whether the schedule records tilde
    /// signals.
    pub phase: Option<bool>,
    /// Undo the detector contraction before inverting sampled data.
    #[serde(default = "yes")]
    pub debias: bool,
    /// Defaults to none for exact data and `1e-4 σ_max²` for sampled data.
    pub ridge: Option<Ridge>,
    /// Defaults to off for exact data and on for sampled data.
    pub psd_projection: Option<bool>,
    /// Restrict wavefunction metrics to `|x| <= window`.
    pub metric_window: Option<f64>,
}

impl Default for ReconstructionSpec {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            node_threshold: DEFAULT_NODE_THRESHOLD,
            phase: None,
            debias: true,
            ridge: None,
            psd_projection: None,
            metric_window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub state: StateSource,
    /// Fock cutoff; taken from the file for `state_file`/`density_file` when
    /// omitted.
    #[serde(default)]
    pub cutoff: Option<usize>,
    /// Depolarizing strength applied to the state.
    #[serde(default)]
    pub depolarize: Option<f64>,
    pub schedule: Schedule,
    /// Shot model; omitted means exact signals only.
    #[serde(default)]
    pub shots: Option<ShotConfig>,
    #[serde(default)]
    pub reconstruction: ReconstructionSpec,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl RunManifest {
    /// Parses a manifest and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| TomoError::io(path, e))?;
        let mut manifest: Self = serde_json::from_str(&text).map_err(|source| TomoError::Json {
            context: format!("invalid manifest {}", path.display()),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut manifest.state {
            StateSource::StateFile(p) | StateSource::DensityFile(p) => resolve(p),
            StateSource::Standard(_) => {}
        }
        if let Some(out) = &mut manifest.output_dir {
            resolve(out);
        }
        Ok(manifest)
    }
}

/// Command-line values that take precedence over the manifest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub force: bool,
    pub cutoff: Option<usize>,
    pub k_max: Option<f64>,
    pub dk: Option<f64>,
    pub beta_over_alpha: Option<f64>,
    pub node_threshold: Option<f64>,
    pub representation: Option<Representation>,
    pub phase: bool,
}

impl Overrides {
    fn apply(&self, manifest: &mut RunManifest) -> Result<()> {
        if let Some(c) = self.cutoff {
            manifest.cutoff = Some(c);
        }
        if let Some(out) = &self.out {
            manifest.output_dir = Some(out.clone());
        }
        if let Some(seed) = self.seed {
            match &mut manifest.shots {
                Some(cfg) => cfg.rng_seed = seed,
                None => {
                    return Err(TomoError::InvalidInput(
                        "--seed given but the manifest has no shot model".into(),
                    ))
                }
            }
        }
        if let Some(t) = self.node_threshold {
            manifest.reconstruction.node_threshold = t;
        }
        if self.phase {
            manifest.reconstruction.phase = Some(true);
        }
        let pure_flags = self.k_max.is_some()
            || self.dk.is_some()
            || self.beta_over_alpha.is_some()
            || self.representation.is_some();
        match &mut manifest.schedule {
            Schedule::Pure(p) => {
                p.k_max = self.k_max.unwrap_or(p.k_max);
                p.dk = self.dk.unwrap_or(p.dk);
                p.beta_over_alpha = self.beta_over_alpha.unwrap_or(p.beta_over_alpha);
                p.representation = self.representation.unwrap_or(p.representation);
            }
            Schedule::Mixed(_) if pure_flags => {
                return Err(TomoError::InvalidInput(
                    "--k-max, --dk, --beta-over-alpha and --representation apply to pure schedules only".into(),
                ))
            }
            Schedule::Mixed(_) => {}
        }
        Ok(())
    }
}

// ── resolved plan ───────────────────────────────────────────────────────────

/// The state the signals are generated from.
#[derive(Debug, Clone, PartialEq)]
pub enum Truth {
    Pure(FockState),
    Mixed(DensityMatrix),
}

impl Truth {
    pub fn cutoff(&self) -> usize {
        match self {
            Truth::Pure(s) => s.cutoff(),
            Truth::Mixed(r) => r.cutoff(),
        }
    }

    pub fn density_matrix(&self) -> DensityMatrix {
        match self {
            Truth::Pure(s) => s.projector(),
            Truth::Mixed(r) => r.clone(),
        }
    }

    fn series(&self, settings: Vec<ExperimentSetting>, kind: SignalKind) -> Result<SignalSeries> {
        match self {
            Truth::Pure(s) => exact_series(s, settings, kind),
            Truth::Mixed(r) => exact_series(r, settings, kind),
        }
    }

    fn to_json_bytes(&self) -> Result<Vec<u8>> {
        match self {
            Truth::Pure(s) => json_bytes(&s.to_json(), "state"),
            Truth::Mixed(r) => json_bytes(&r.to_json(), "density matrix"),
        }
    }

    /// `⟨x|ρ|x⟩` on `grid`, or the momentum density in momentum mode.
    pub fn density_on(&self, grid: &PositionGrid, representation: Representation) -> Vec<f64> {
        match self {
            Truth::Pure(s) => grid
                .points()
                .map(|x| match representation {
                    Representation::Position => s.position_amplitude(x).norm_sqr(),
                    Representation::Momentum => s.momentum_amplitude(x).norm_sqr(),
                })
                .collect(),
            Truth::Mixed(r) => {
                let r = match representation {
                    Representation::Position => r.clone(),
                    Representation::Momentum => r.rotated(FRAC_PI_2),
                };
                let n = r.cutoff();
                grid.points()
                    .map(|x| {
                        let h = hermite_functions(x, n);
                        let mut acc = 0.0;
                        for i in 0..n {
                            for j in 0..n {
                                acc += (r.get(i, j) * h[i] * h[j]).re;
                            }
                        }
                        acc
                    })
                    .collect()
            }
        }
    }
}

fn build_truth(manifest: &RunManifest, warnings: &mut Vec<String>) -> Result<Truth> {
    let base = match &manifest.state {
        StateSource::Standard(spec) => {
            let made = make_standard_state(spec, manifest.cutoff.unwrap_or(DEFAULT_CUTOFF))?;
            warnings.extend(made.warning);
            Truth::Pure(made.state)
        }
        StateSource::StateFile(path) => {
            let json: StateJson = read_json(path, "state file")?;
            let state = FockState::from_json(&json)?;
            Truth::Pure(match manifest.cutoff {
                Some(c) if c != state.cutoff() => state.with_cutoff(c)?,
                _ => state,
            })
        }
        StateSource::DensityFile(path) => {
            let json: DensityJson = read_json(path, "density file")?;
            let rho = DensityMatrix::from_json(&json)?;
            if let Some(c) = manifest.cutoff.filter(|&c| c != rho.cutoff()) {
                return Err(TomoError::DimensionMismatch(format!(
                    "manifest cutoff {c} differs from density file cutoff {}",
                    rho.cutoff()
                )));
            }
            Truth::Mixed(rho)
        }
    };
    match manifest.depolarize {
        None => Ok(base),
        Some(eps) => Ok(Truth::Mixed(depolarize(&base.density_matrix(), eps)?)),
    }
}

/// Settings and file names for one series.
#[derive(Debug, Clone)]
struct SeriesPlan {
    settings: Vec<ExperimentSetting>,
    kind: SignalKind,
    exact_name: &'static str,
    sampled_name: &'static str,
    seed_offset: u64,
}

fn series_plans(manifest: &RunManifest, cutoff: usize) -> Result<Vec<SeriesPlan>> {
    match &manifest.schedule {
        Schedule::Pure(p) => {
            if p.k_max == 0.0 {
                return Err(TomoError::InvalidInput("schedule is empty: k_max is 0".into()));
            }
            let grid = KGrid::new(p.k_max, p.dk)?;
            let mut plans = vec![SeriesPlan {
                settings: plain_settings(&grid, p.representation),
                kind: SignalKind::Plain,
                exact_name: PLAIN_EXACT,
                sampled_name: PLAIN_SAMPLED,
                seed_offset: 0,
            }];
            if p.tilde {
                if p.beta_over_alpha == 0.0 || !p.beta_over_alpha.is_finite() {
                    return Err(TomoError::InvalidInput(
                        "beta_over_alpha must be finite and nonzero".into(),
                    ));
                }
                plans.push(SeriesPlan {
                    settings: tilde_settings(&grid, p.beta_over_alpha, p.representation),
                    kind: SignalKind::Tilde,
                    exact_name: TILDE_EXACT,
                    sampled_name: TILDE_SAMPLED,
                    seed_offset: 1,
                });
            }
            Ok(plans)
        }
        Schedule::Mixed(m) => {
            let k_list = m.k_list.clone().unwrap_or_else(default_k_list);
            let t0_list = m.t0_list.clone().unwrap_or_else(|| default_rotation_schedule(cutoff));
            if k_list.is_empty() || t0_list.is_empty() {
                return Err(TomoError::InvalidInput(
                    "schedule is empty: k_list and t0_list need entries".into(),
                ));
            }
            Ok(vec![SeriesPlan {
                settings: rotated_settings(&k_list, &t0_list)?,
                kind: SignalKind::Plain,
                exact_name: SIGNALS_EXACT,
                sampled_name: SIGNALS_SAMPLED,
                seed_offset: 0,
            }])
        }
    }
}

// ── output handling ─────────────────────────────────────────────────────────

/// Files of one command, held in memory until [`OutputSet::commit`].
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(&'static str, Vec<u8>)>,
}

impl OutputSet {
    fn add(&mut self, name: &'static str, bytes: Vec<u8>) {
        self.files.push((name, bytes));
    }

    fn extend(&mut self, other: OutputSet) {
        self.files.extend(other.files);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.files.iter().map(|(n, _)| *n).collect()
    }

    /// Writes every file, refusing to replace existing ones unless `force`.
    pub fn commit(&self, dir: &Path, force: bool) -> Result<Vec<PathBuf>> {
        let paths: Vec<PathBuf> = self.files.iter().map(|(n, _)| dir.join(n)).collect();
        if !force {
            if let Some(p) = paths.iter().find(|p| p.exists()) {
                return Err(TomoError::WouldOverwrite(p.clone()));
            }
        }
        fs::create_dir_all(dir).map_err(|e| TomoError::io(dir, e))?;
        for (path, (_, bytes)) in paths.iter().zip(&self.files) {
            fs::write(path, bytes).map_err(|e| TomoError::io(path, e))?;
        }
        Ok(paths)
    }
}

fn json_bytes<T: Serialize + ?Sized>(value: &T, what: &str) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| TomoError::Json {
        context: format!("serializing {what}"),
        source,
    })?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| TomoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| TomoError::Json {
        context: format!("invalid {what} {}", path.display()),
        source,
    })
}

fn csv_bytes(series: &SignalSeries) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    series.write_csv(&mut buf)?;
    Ok(buf)
}

fn read_series(path: &Path, kind: SignalKind, representation: Representation) -> Result<SignalSeries> {
    let file = fs::File::open(path).map_err(|e| TomoError::io(path, e))?;
    SignalSeries::read_csv(file, kind, representation)
}

fn output_dir(manifest: &RunManifest) -> Result<PathBuf> {
    manifest
        .output_dir
        .clone()
        .ok_or_else(|| TomoError::MissingInput("output directory (set output_dir or pass --out)".into()))
}

/// Outcome of a command.
#[derive(Debug, Default)]
pub struct Report {
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub metrics: Option<Metrics>,
}

// ── simulate ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
struct Provenance<'a> {
    program: &'static str,
    version: &'static str,
    command: &'a str,
    rng: Option<RngRecord>,
    manifest: &'a RunManifest,
    outputs: Vec<&'static str>,
}

#[derive(Debug, Clone, Serialize)]
struct RngRecord {
    generator: &'static str,
    /// Seed of each sampled file.
    seeds: Vec<(&'static str, u64)>,
}

/// Exact and, with a shot model, sampled series keyed by file name.
struct Simulation {
    truth: Truth,
    series: Vec<(&'static str, SignalSeries)>,
    seeds: Vec<(&'static str, u64)>,
    warnings: Vec<String>,
}

fn simulate(manifest: &RunManifest) -> Result<Simulation> {
    let mut warnings = Vec::new();
    let truth = build_truth(manifest, &mut warnings)?;
    let plans = series_plans(manifest, truth.cutoff())?;
    if let Some(cfg) = &manifest.shots {
        cfg.validate()?;
    }
    let mut series = Vec::new();
    let mut seeds = Vec::new();
    for plan in plans {
        let exact = truth.series(plan.settings, plan.kind)?;
        if let Some(cfg) = &manifest.shots {
            let cfg = ShotConfig {
                rng_seed: cfg.rng_seed.wrapping_add(plan.seed_offset),
                ..*cfg
            };
            series.push((plan.sampled_name, sample_signal(&exact, &cfg)?));
            seeds.push((plan.sampled_name, cfg.rng_seed));
        }
        series.push((plan.exact_name, exact));
    }
    Ok(Simulation {
        truth,
        series,
        seeds,
        warnings,
    })
}

fn simulation_outputs(manifest: &RunManifest, sim: &Simulation, command: &str) -> Result<OutputSet> {
    let mut out = OutputSet::default();
    let mut series: Vec<_> = sim.series.iter().collect();
    series.sort_by_key(|(name, _)| *name);
    for (name, s) in series {
        out.add(name, csv_bytes(s)?);
    }
    out.add(TRUTH, sim.truth.to_json_bytes()?);
    let mut outputs = out.names();
    outputs.push(PROVENANCE);
    let provenance = Provenance {
        program: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        rng: manifest.shots.map(|_| RngRecord {
            generator: "ChaCha8",
            seeds: sim.seeds.clone(),
        }),
        manifest,
        outputs,
    };
    out.add(PROVENANCE, json_bytes(&provenance, "provenance")?);
    Ok(out)
}

/// Writes exact (and sampled) signal CSVs, the state and a provenance record.
pub fn cmd_simulate(manifest: &RunManifest, overrides: &Overrides) -> Result<Report> {
    let mut manifest = manifest.clone();
    overrides.apply(&mut manifest)?;
    let dir = output_dir(&manifest)?;
    let sim = simulate(&manifest)?;
    let out = simulation_outputs(&manifest, &sim, "simulate")?;
    Ok(Report {
        written: out.commit(&dir, overrides.force)?,
        warnings: sim.warnings,
        metrics: None,
    })
}

// ── reconstruct ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PureMetrics {
    pub representation: Representation,
    pub density_integral: f64,
    pub negative_points: usize,
    pub imag_residue: f64,
    /// `√∫(|ψ_rec|² − ⟨x|ρ|x⟩)² dx` against the manifest state.
    pub density_l2: f64,
    #[serde(default)]
    pub wavefunction: Option<ProfileErrors>,
    #[serde(default)]
    pub segments: Option<usize>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedMetrics {
    pub fidelity: Option<f64>,
    pub frobenius: f64,
    pub purity: f64,
    pub min_eigenvalue: f64,
    pub solver: SolverReport,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Metrics {
    Pure(PureMetrics),
    Mixed(MixedMetrics),
}

/// Signal series available to a reconstruction, by file name.
trait SeriesSource {
    fn get(&self, name: &'static str, kind: SignalKind, rep: Representation) -> Result<Option<SignalSeries>>;
    fn describe(&self, name: &'static str) -> String;
}

struct DirSource<'a>(&'a Path);

impl SeriesSource for DirSource<'_> {
    fn get(&self, name: &'static str, kind: SignalKind, rep: Representation) -> Result<Option<SignalSeries>> {
        let path = self.0.join(name);
        if !path.exists() {
            return Ok(None);
        }
        read_series(&path, kind, rep).map(Some)
    }

    fn describe(&self, name: &'static str) -> String {
        self.0.join(name).display().to_string()
    }
}

impl SeriesSource for Simulation {
    fn get(&self, name: &'static str, _: SignalKind, _: Representation) -> Result<Option<SignalSeries>> {
        Ok(self.series.iter().find(|(n, _)| *n == name).map(|(_, s)| s.clone()))
    }

    fn describe(&self, name: &'static str) -> String {
        name.to_string()
    }
}

fn require(src: &dyn SeriesSource, name: &'static str, kind: SignalKind, rep: Representation) -> Result<SignalSeries> {
    src.get(name, kind, rep)?
        .ok_or_else(|| TomoError::MissingInput(format!("signal series {}", src.describe(name))))
}

fn prepare(series: SignalSeries, manifest: &RunManifest) -> Result<SignalSeries> {
    match &manifest.shots {
        Some(cfg) if manifest.reconstruction.debias && cfg.detector_error > 0.0 => debias(&series, cfg.detector_error),
        _ => Ok(series),
    }
}

fn reconstruct(manifest: &RunManifest, truth: &Truth, src: &dyn SeriesSource) -> Result<(OutputSet, Metrics)> {
    let sampled = manifest.shots.is_some();
    let spec = &manifest.reconstruction;
    let mut out = OutputSet::default();
    match &manifest.schedule {
        Schedule::Pure(p) => {
            let rep = p.representation;
            let (plain_name, tilde_name) = if sampled {
                (PLAIN_SAMPLED, TILDE_SAMPLED)
            } else {
                (PLAIN_EXACT, TILDE_EXACT)
            };
            let plain = prepare(require(src, plain_name, SignalKind::Plain, rep)?, manifest)?;
            let want_phase = spec.phase.unwrap_or(p.tilde);
            let tilde = if want_phase {
                let t = src.get(tilde_name, SignalKind::Tilde, rep)?.ok_or_else(|| {
                    TomoError::MissingInput(format!(
                        "tilde series {} (required for phase reconstruction)",
                        src.describe(tilde_name)
                    ))
                })?;
                Some(prepare(t, manifest)?)
            } else {
                None
            };
            let options = PureOptions {
                grid: spec.grid.build()?,
                beta_over_alpha: p.beta_over_alpha,
                node_threshold: spec.node_threshold,
                representation: rep,
            };
            let rec = reconstruct_pure(&plain, tilde.as_ref(), &options)?;
            let mut buf = Vec::new();
            rec.density.write_csv(&mut buf)?;
            out.add(DENSITY, buf);

            let truth_density = truth.density_on(&options.grid, rep);
            let mut metrics = PureMetrics {
                representation: rep,
                density_integral: rec.density.integral(),
                negative_points: rec.density.negative_points(),
                imag_residue: rec.density.imag_residue,
                density_l2: density_l2_distance(&rec.density, &truth_density)?,
                wavefunction: None,
                segments: None,
                warnings: rec.density.warnings.clone(),
            };
            if let Some(psi) = &rec.wavefunction {
                let mut buf = Vec::new();
                psi.write_csv(&mut buf)?;
                out.add(PSI, buf);
                metrics.segments = Some(psi.segments);
                if let Truth::Pure(state) = truth {
                    metrics.wavefunction = Some(compare_wavefunction(
                        psi,
                        |x| amplitude(state, x, rep),
                        spec.metric_window,
                    )?);
                }
            }
            Ok((out, Metrics::Pure(metrics)))
        }
        Schedule::Mixed(_) => {
            let name = if sampled { SIGNALS_SAMPLED } else { SIGNALS_EXACT };
            let series = prepare(
                require(src, name, SignalKind::Plain, Representation::Position)?,
                manifest,
            )?;
            let design = build_design_for_settings(series.settings().to_vec(), truth.cutoff())?;
            let defaults = if sampled {
                SolveOptions::sampled()
            } else {
                SolveOptions::exact()
            };
            let options = SolveOptions {
                ridge: spec.ridge.unwrap_or(defaults.ridge),
                psd_projection: spec.psd_projection.unwrap_or(defaults.psd_projection),
            };
            let rec = solve_density_matrix(&design, std::slice::from_ref(&series), &options)?;
            out.add(RHO, json_bytes(&rec.rho.to_json(), "density matrix")?);
            out.add(SOLVER_REPORT, json_bytes(&rec.report, "solver report")?);

            let reference = truth.density_matrix();
            let mut warnings = Vec::new();
            let fid = match fidelity(&rec.rho, &reference) {
                Ok(f) => Some(f),
                Err(e) => {
                    warnings.push(format!("fidelity not computed: {e}"));
                    None
                }
            };
            let metrics = MixedMetrics {
                fidelity: fid,
                frobenius: rec.rho.frobenius_distance(&reference)?,
                purity: rec.rho.purity(),
                min_eigenvalue: rec.rho.eigenvalues().first().copied().unwrap_or(0.0),
                solver: rec.report,
                warnings,
            };
            Ok((out, Metrics::Mixed(metrics)))
        }
    }
}

fn amplitude(state: &FockState, x: f64, rep: Representation) -> Complex64 {
    match rep {
        Representation::Position => state.position_amplitude(x),
        Representation::Momentum => state.momentum_amplitude(x),
    }
}

fn add_metrics(out: &mut OutputSet, metrics: &Metrics) -> Result<()> {
    out.add(METRICS, json_bytes(metrics, "metrics")?);
    Ok(())
}

fn metric_warnings(metrics: &Metrics) -> Vec<String> {
    match metrics {
        Metrics::Pure(m) => m.warnings.clone(),
        Metrics::Mixed(m) => m.warnings.clone(),
    }
}

/// Reads the series written by [`cmd_simulate`] from the output directory and
/// writes the reconstruction with metrics against the manifest state.
pub fn cmd_reconstruct(manifest: &RunManifest, overrides: &Overrides) -> Result<Report> {
    let mut manifest = manifest.clone();
    overrides.apply(&mut manifest)?;
    let dir = output_dir(&manifest)?;
    let mut warnings = Vec::new();
    let truth = build_truth(&manifest, &mut warnings)?;
    let (mut out, metrics) = reconstruct(&manifest, &truth, &DirSource(&dir))?;
    add_metrics(&mut out, &metrics)?;
    warnings.extend(metric_warnings(&metrics));
    Ok(Report {
        written: out.commit(&dir, overrides.force)?,
        warnings,
        metrics: Some(metrics),
    })
}

/// Simulation followed by reconstruction; all files are written together.
pub fn cmd_full_run(manifest: &RunManifest, overrides: &Overrides) -> Result<Report> {
    let mut manifest = manifest.clone();
    overrides.apply(&mut manifest)?;
    let dir = output_dir(&manifest)?;
    let sim = simulate(&manifest)?;
    let (rec_out, metrics) = reconstruct(&manifest, &sim.truth, &sim)?;
    let mut out = simulation_outputs(&manifest, &sim, "full-run")?;
    out.extend(rec_out);
    add_metrics(&mut out, &metrics)?;
    let mut warnings = sim.warnings.clone();
    warnings.extend(metric_warnings(&metrics));
    Ok(Report {
        written: out.commit(&dir, overrides.force)?,
        warnings,
        metrics: Some(metrics),
    })
}

// ── compare ─────────────────────────────────────────────────────────────────

/// Any file that can stand on either side of a comparison.
#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    State(FockState),
    Density(DensityMatrix),
    Wavefunction(ComplexProfile),
    Profile(DensityProfile),
}

impl Artifact {
    /// Detects the format from the extension and, within it, from the JSON
    /// keys or CSV header.
    pub fn load(path: &Path) -> Result<Self> {
        let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv {
            let text = fs::read_to_string(path).map_err(|e| TomoError::io(path, e))?;
            let header = text.lines().next().unwrap_or("").trim();
            return if header == "x,abs2" {
                DensityProfile::read_csv(text.as_bytes()).map(Artifact::Profile)
            } else {
                ComplexProfile::read_csv(text.as_bytes()).map(Artifact::Wavefunction)
            };
        }
        let value: serde_json::Value = read_json(path, "JSON file")?;
        let parse = |what: &str| {
            let context = format!("invalid {what} {}", path.display());
            move |source| TomoError::Json { context, source }
        };
        if value.get("amplitudes").is_some() {
            let json: StateJson = serde_json::from_value(value).map_err(parse("state file"))?;
            FockState::from_json(&json).map(Artifact::State)
        } else if value.get("entries").is_some() {
            let json: DensityJson = serde_json::from_value(value).map_err(parse("density file"))?;
            DensityMatrix::from_json(&json).map(Artifact::Density)
        } else {
            Err(TomoError::InvalidInput(format!(
                "{} is neither a state (amplitudes) nor a density matrix (entries)",
                path.display()
            )))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompareMetrics {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sup: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub density_l2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fidelity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub frobenius: Option<f64>,
}

impl From<ProfileErrors> for CompareMetrics {
    fn from(e: ProfileErrors) -> Self {
        Self {
            sup: Some(e.sup),
            l2: Some(e.l2),
            density_l2: Some(e.density_l2),
            points: Some(e.points),
            ..Self::default()
        }
    }
}

fn same_grid(a: &PositionGrid, b: &PositionGrid) -> Result<()> {
    let tol = 1e-9 * a.dx();
    if a.len() != b.len() || (a.x_min() - b.x_min()).abs() > tol || (a.x_max() - b.x_max()).abs() > tol {
        return Err(TomoError::DimensionMismatch(format!(
            "incompatible grids: [{}, {}] with {} points vs [{}, {}] with {} points",
            a.x_min(),
            a.x_max(),
            a.len(),
            b.x_min(),
            b.x_max(),
            b.len()
        )));
    }
    Ok(())
}

fn matrix_metrics(a: &DensityMatrix, b: &DensityMatrix) -> Result<CompareMetrics> {
    Ok(CompareMetrics {
        fidelity: Some(fidelity(a, b)?),
        frobenius: Some(a.frobenius_distance(b)?),
        ..CompareMetrics::default()
    })
}

/// Scores `reconstruction` against `truth`. Wavefunctions are aligned by the
/// best global phase and compared on points valid in both; density matrices
/// are compared by fidelity and Frobenius distance. `representation` selects
/// position or momentum densities when a state is compared with a profile.
pub fn compare(
    truth: &Artifact,
    reconstruction: &Artifact,
    window: Option<f64>,
    representation: Representation,
) -> Result<CompareMetrics> {
    use Artifact::*;
    let state_density = |t: &Artifact, grid: &PositionGrid| -> Option<Vec<f64>> {
        match t {
            State(s) => Some(Truth::Pure(s.clone()).density_on(grid, representation)),
            Density(r) => Some(Truth::Mixed(r.clone()).density_on(grid, representation)),
            _ => None,
        }
    };
    match (truth, reconstruction) {
        (State(a), State(b)) => matrix_metrics(&b.projector(), &a.projector()),
        (State(a), Density(b)) => matrix_metrics(b, &a.projector()),
        (Density(a), State(b)) => matrix_metrics(&b.projector(), a),
        (Density(a), Density(b)) => matrix_metrics(b, a),
        (State(s), Wavefunction(w)) => {
            compare_wavefunction(w, |x| amplitude(s, x, representation), window).map(Into::into)
        }
        (Wavefunction(t), Wavefunction(w)) => {
            same_grid(&t.grid, &w.grid)?;
            let mut joint = w.clone();
            for (ok, t_ok) in joint.valid.iter_mut().zip(&t.valid) {
                *ok &= *t_ok;
            }
            let (x0, dx) = (t.grid.x_min(), t.grid.dx());
            let lookup = |x: f64| t.values[((x - x0) / dx).round() as usize];
            compare_wavefunction(&joint, lookup, window).map(Into::into)
        }
        (t @ (State(_) | Density(_)), Profile(p)) => {
            let d = state_density(t, &p.grid).expect("state or density");
            Ok(density_only(density_l2_distance(p, &d)?))
        }
        (Density(_), Wavefunction(w)) => {
            let d = state_density(truth, &w.grid).expect("density");
            let rec = DensityProfile::from_values(w.grid, w.values.iter().map(|v| v.norm_sqr()).collect());
            Ok(density_only(density_l2_distance(&rec, &d)?))
        }
        (Profile(t), Profile(p)) => {
            same_grid(&t.grid, &p.grid)?;
            Ok(density_only(density_l2_distance(p, &t.values)?))
        }
        (Profile(t), Wavefunction(w)) | (Wavefunction(w), Profile(t)) => {
            same_grid(&t.grid, &w.grid)?;
            let rec = DensityProfile::from_values(w.grid, w.values.iter().map(|v| v.norm_sqr()).collect());
            Ok(density_only(density_l2_distance(&rec, &t.values)?))
        }
        (Wavefunction(w), t @ (State(_) | Density(_))) => compare(t, &Wavefunction(w.clone()), window, representation),
        (Profile(p), t @ (State(_) | Density(_))) => compare(t, &Profile(p.clone()), window, representation),
    }
}

fn density_only(l2: f64) -> CompareMetrics {
    CompareMetrics {
        density_l2: Some(l2),
        ..CompareMetrics::default()
    }
}

/// Loads both files, scores them and writes `compare.json` when an output
/// directory is given.
pub fn cmd_compare(
    truth: &Path,
    reconstruction: &Path,
    window: Option<f64>,
    representation: Representation,
    out: Option<&Path>,
    force: bool,
) -> Result<(CompareMetrics, Vec<PathBuf>)> {
    let metrics = compare(
        &Artifact::load(truth)?,
        &Artifact::load(reconstruction)?,
        window,
        representation,
    )?;
    let written = match out {
        Some(dir) => {
            let mut set = OutputSet::default();
            set.add(COMPARE, json_bytes(&metrics, "comparison")?);
            set.commit(dir, force)?
        }
        None => Vec::new(),
    };
    Ok((metrics, written))
}

// ── command line ────────────────────────────────────────────────────────────

#[derive(Debug, Parser)]
#[command(
    name = "probe-tomo",
    version,
    about = "Probe-based oscillator tomography: simulate, reconstruct, compare"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed of the shot simulator (overrides the manifest).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides the manifest).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replace existing output files.
    #[arg(long, global = true)]
    pub force: bool,
    /// Fock cutoff (overrides the manifest).
    #[arg(long, global = true)]
    pub cutoff: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PureArgs {
    /// Largest probe wavenumber.
    #[arg(long)]
    pub k_max: Option<f64>,
    /// Wavenumber step.
    #[arg(long)]
    pub dk: Option<f64>,
    /// Coupling ratio of the combined-coupling series.
    #[arg(long)]
    pub beta_over_alpha: Option<f64>,
    /// Relative density below which points are masked out of the phase.
    #[arg(long)]
    pub node_threshold: Option<f64>,
    /// `position` or `momentum`.
    #[arg(long, value_parser = parse_representation)]
    pub representation: Option<Representation>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate exact and sampled signal CSVs.
    Simulate {
        manifest: PathBuf,
        #[command(flatten)]
        pure: PureArgs,
    },
    /// Invert signal CSVs from the output directory.
    Reconstruct {
        manifest: PathBuf,
        #[command(flatten)]
        pure: PureArgs,
        /// Recover the phase; fails if the tilde series is missing.
        #[arg(long)]
        phase: bool,
    },
    /// Score a reconstruction file against a reference file.
    Compare {
        /// State JSON, density-matrix JSON, or profile CSV.
        #[arg(long)]
        truth: PathBuf,
        /// Wavefunction CSV, density CSV, or density-matrix JSON.
        reconstruction: PathBuf,
        /// Only compare points with `|x| <= window`.
        #[arg(long)]
        window: Option<f64>,
        #[arg(long, value_parser = parse_representation, default_value = "position")]
        representation: Representation,
    },
    /// Simulate and reconstruct in one step.
    FullRun {
        manifest: PathBuf,
        #[command(flatten)]
        pure: PureArgs,
        /// Recover the phase even if the manifest does not ask for it.
        #[arg(long)]
        phase: bool,
    },
}

fn parse_representation(s: &str) -> std::result::Result<Representation, String> {
    match s.to_ascii_lowercase().as_str() {
        "position" | "x" => Ok(Representation::Position),
        "momentum" | "p" => Ok(Representation::Momentum),
        other => Err(format!("unknown representation {other:?} (use position or momentum)")),
    }
}

fn overrides(global: &GlobalArgs, pure: &PureArgs, phase: bool) -> Overrides {
    Overrides {
        seed: global.seed,
        out: global.out.clone(),
        force: global.force,
        cutoff: global.cutoff,
        k_max: pure.k_max,
        dk: pure.dk,
        beta_over_alpha: pure.beta_over_alpha,
        node_threshold: pure.node_threshold,
        representation: pure.representation,
        phase,
    }
}

/// Output of [`run`]: files written, warnings, and the metrics to print.
#[derive(Debug)]
pub struct Outcome {
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub metrics: Option<serde_json::Value>,
}

fn to_value<T: Serialize>(value: &T) -> Result<serde_json::Value> {
    serde_json::to_value(value).map_err(|source| TomoError::Json {
        context: "serializing metrics".into(),
        source,
    })
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let report = match &cli.command {
        Command::Simulate { manifest, pure } => {
            cmd_simulate(&RunManifest::load(manifest)?, &overrides(&cli.global, pure, false))?
        }
        Command::Reconstruct { manifest, pure, phase } => {
            cmd_reconstruct(&RunManifest::load(manifest)?, &overrides(&cli.global, pure, *phase))?
        }
        Command::FullRun { manifest, pure, phase } => {
            cmd_full_run(&RunManifest::load(manifest)?, &overrides(&cli.global, pure, *phase))?
        }
        Command::Compare {
            truth,
            reconstruction,
            window,
            representation,
        } => {
            let (metrics, written) = cmd_compare(
                truth,
                reconstruction,
                *window,
                *representation,
                cli.global.out.as_deref(),
                cli.global.force,
            )?;
            return Ok(Outcome {
                written,
                warnings: Vec::new(),
                metrics: Some(to_value(&metrics)?),
            });
        }
    };
    Ok(Outcome {
        written: report.written,
        warnings: report.warnings,
        metrics: report.metrics.as_ref().map(to_value).transpose()?,
    })
}

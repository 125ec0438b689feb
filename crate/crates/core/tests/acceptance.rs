//! Acceptance suite. Prints one PASS/FAIL line per criterion and fails if any
//! criterion fails.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::*;
use num_complex::Complex64;
use probe_tomo::cli::{cmd_full_run, Metrics, Overrides, RunManifest, DENSITY};
use probe_tomo::experiment::{debias, sample_signal, ShotConfig};
use probe_tomo::mixed_recon::{default_design, fidelity, solve_density_matrix, SolveOptions};
use probe_tomo::pure_recon::{
    compute_g, density_l2_distance, exact_pure_series, reconstruct_pure, DensityProfile, PureOptions,
};
use probe_tomo::response::{
    displacement_matrix, exact_series, plain_settings, pz_even, pz_odd, tilde_settings, KGrid, Representation,
    SignalKind,
};
use probe_tomo::statespace::{hermite_functions, FockState, PositionGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

struct Verdict {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn manifest(name: &str) -> RunManifest {
    let path: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../manifests").join(name);
    RunManifest::load(&path).unwrap()
}

fn into(dir: &Path) -> Overrides {
    Overrides {
        out: Some(dir.to_path_buf()),
        ..Overrides::default()
    }
}

fn pure_sup(report: probe_tomo::cli::Report) -> f64 {
    match report.metrics {
        Some(Metrics::Pure(m)) => m.wavefunction.expect("phase recovered").sup,
        other => panic!("expected pure metrics, got {other:?}"),
    }
}

fn fig1_sup(beta_over_alpha: Option<f64>) -> (f64, Duration) {
    let tmp = TempDir::new().unwrap();
    let overrides = Overrides {
        beta_over_alpha,
        ..into(tmp.path())
    };
    let start = Instant::now();
    let sup = pure_sup(cmd_full_run(&manifest("fig1.json"), &overrides).unwrap());
    (sup, start.elapsed())
}

fn superposition() -> FockState {
    FockState::new(vec![c(1.0, 0.0), c(0.0, 1.0)])
        .unwrap()
        .with_cutoff(16)
        .unwrap()
}

fn exact_wavefunction() -> Verdict {
    let (sup, t) = fig1_sup(None);
    check(
        sup < 1e-3 && t < Duration::from_secs(5),
        format!(
            "sup error {sup:.3e} (< 1e-3) on |x| <= 4, {:.2} s (< 5 s)",
            t.as_secs_f64()
        ),
    )
}

fn second_order_robustness() -> Verdict {
    let (base, _) = fig1_sup(None);
    let (coarse, _) = fig1_sup(Some(0.1));

    let s = superposition();
    let grid = PositionGrid::default();
    let kgrid = KGrid::default();
    let truth: Vec<Complex64> = grid
        .points()
        .map(|x| s.position_amplitude(x).conj() * s.position_derivative(x))
        .collect();
    let g_error = |r: f64| {
        let plain = exact_series(&s, plain_settings(&kgrid, Representation::Position), SignalKind::Plain).unwrap();
        let tilde = exact_series(
            &s,
            tilde_settings(&kgrid, r, Representation::Position),
            SignalKind::Tilde,
        )
        .unwrap();
        let g = compute_g(&plain, &tilde, r, &grid, Representation::Position).unwrap();
        g.iter().zip(&truth).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    };
    let ratio = g_error(1e-2) / g_error(5e-3);
    check(
        coarse > base && coarse < 0.05 && (1.7..=2.3).contains(&ratio),
        format!(
            "sup error {coarse:.3e} at beta/alpha 0.1 (> {base:.3e}, < 0.05), G error ratio {ratio:.3} (in [1.7, 2.3])"
        ),
    )
}

fn sampled_mixed_profile() -> Verdict {
    let tmp = TempDir::new().unwrap();
    let start = Instant::now();
    cmd_full_run(&manifest("fig2.json"), &into(tmp.path())).unwrap();
    let t = start.elapsed();
    let rec = DensityProfile::read_csv(fs::File::open(tmp.path().join(DENSITY)).unwrap()).unwrap();

    // Four equal amplitudes in a cutoff of 4, so the maximally mixed part
    // is the average of the four Hermite densities.
    let (eps, d) = (0.1, 4);
    let mut pure = Vec::new();
    let mut mixed = Vec::new();
    for x in rec.grid.points() {
        let h = hermite_functions(x, d);
        let psi: f64 = h.iter().sum::<f64>() / (d as f64).sqrt();
        let flat: f64 = h.iter().map(|v| v * v).sum::<f64>() / d as f64;
        pure.push(psi * psi);
        mixed.push((1.0 - eps) * psi * psi + eps * flat);
    }
    let to_mixed = density_l2_distance(&rec, &mixed).unwrap();
    let to_pure = density_l2_distance(&rec, &pure).unwrap();
    check(
        to_mixed < to_pure && t < Duration::from_secs(30),
        format!(
            "L2 to depolarized profile {to_mixed:.3e} < L2 to pure profile {to_pure:.3e}, {:.2} s (< 30 s)",
            t.as_secs_f64()
        ),
    )
}

fn characteristic_invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let kgrid = KGrid::default();
    let mut worst_modulus: f64 = 0.0;
    let mut worst_origin: f64 = 0.0;
    let mut worst_parity: f64 = 0.0;
    for _ in 0..100 {
        let s = random_state(&mut rng, 8);
        let plain = exact_series(&s, plain_settings(&kgrid, Representation::Position), SignalKind::Plain).unwrap();
        let tilde = exact_series(
            &s,
            tilde_settings(&kgrid, 5e-4, Representation::Position),
            SignalKind::Tilde,
        )
        .unwrap();
        for series in [&plain, &tilde] {
            for (e, o) in series.even().iter().zip(series.odd()) {
                worst_modulus = worst_modulus.max(e * e + o * o);
            }
        }
        worst_origin = worst_origin
            .max((plain.even()[0] - 1.0).abs())
            .max(plain.odd()[0].abs());
        for (setting, (e, o)) in plain.settings().iter().zip(plain.even().iter().zip(plain.odd())) {
            let k = setting.k;
            worst_parity = worst_parity
                .max((pz_even(&s, -k) - e).abs())
                .max((pz_odd(&s, -k) + o).abs());
        }
    }
    check(
        worst_modulus <= 1.0 + 1e-12 && worst_origin < 1e-12 && worst_parity < 1e-12,
        format!(
            "max Pe^2+Po^2 = {worst_modulus:.15}, |Pe(0)-1|,|Po(0)| <= {worst_origin:.1e}, parity defect {worst_parity:.1e}"
        ),
    )
}

fn displacement_oracle() -> Verdict {
    let oracle = QuadratureOracle::new(9);
    let mut worst: f64 = 0.0;
    for k in -6..=6 {
        for q in -6..=6 {
            let (k, q) = (k as f64, q as f64);
            let diff = displacement_matrix(9, k, q) - oracle.matrix(k, q);
            worst = diff.iter().map(|z| z.norm()).fold(worst, f64::max);
        }
    }
    check(
        worst < 1e-8,
        format!("max deviation {worst:.2e} (< 1e-8) over m,n <= 8, k,q in -6..=6"),
    )
}

fn mixed_round_trip() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let design = default_design(4).unwrap();
    let mut worst: f64 = 0.0;
    let mut fidelities = Vec::new();
    for seed in 0..50 {
        let rho = random_density(&mut rng, 4);
        let exact = exact_series(&rho, design.settings().to_vec(), SignalKind::Plain).unwrap();
        let rec = solve_density_matrix(&design, std::slice::from_ref(&exact), &SolveOptions::exact()).unwrap();
        worst = worst.max(rec.rho.frobenius_distance(&rho).unwrap());
        let sampled = sample_signal(&exact, &ShotConfig::new(100_000, 0.01, seed).unwrap()).unwrap();
        let rec = solve_density_matrix(&design, &[debias(&sampled, 0.01).unwrap()], &SolveOptions::sampled()).unwrap();
        fidelities.push(fidelity(&rec.rho, &rho).unwrap());
    }
    fidelities.sort_by(f64::total_cmp);
    let median = 0.5 * (fidelities[24] + fidelities[25]);
    let t = start.elapsed();
    check(
        worst < 1e-8 && median > 0.98 && t < Duration::from_secs(120),
        format!(
            "exact Frobenius {worst:.2e} (< 1e-8), sampled median fidelity {median:.5} (> 0.98), {:.2} s (< 120 s)",
            t.as_secs_f64()
        ),
    )
}

fn momentum_consistency() -> Verdict {
    let (k_max, ratio) = (12.0, 1e-4);
    let kgrid = KGrid::new(k_max, 0.05).unwrap();
    let grid = PositionGrid::default();
    let xs: Vec<f64> = grid.points().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let s = random_state(&mut rng, 4);
        let run = |rep| {
            let options = PureOptions {
                representation: rep,
                beta_over_alpha: ratio,
                ..PureOptions::default()
            };
            let (plain, tilde) = exact_pure_series(&s, &kgrid, ratio, rep).unwrap();
            reconstruct_pure(&plain, Some(&tilde), &options)
                .unwrap()
                .wavefunction
                .unwrap()
        };
        let position = run(Representation::Position);
        let momentum = run(Representation::Momentum);
        let transformed: Vec<Complex64> = xs
            .iter()
            .map(|&p| fourier_transform(&xs, &position.values, p))
            .collect();
        worst = worst.max(aligned_sup(&transformed, &momentum.values));
    }
    check(
        worst < 1e-2,
        format!("max sup difference {worst:.2e} (< 1e-2), 10 states of 4 levels, K = {k_max}, beta/alpha = {ratio:e}"),
    )
}

fn determinism() -> Verdict {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let m = manifest("fig2.json");
    let first = cmd_full_run(&m, &into(a.path())).unwrap().written;
    cmd_full_run(&m, &into(b.path())).unwrap();
    let csvs: Vec<&PathBuf> = first
        .iter()
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    let differing: Vec<String> = csvs
        .iter()
        .filter(|p| fs::read(p).unwrap() != fs::read(b.path().join(p.file_name().unwrap())).unwrap())
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    check(
        !csvs.is_empty() && differing.is_empty(),
        format!("{} CSV files compared, differing: {differing:?}", csvs.len()),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("exact two-level superposition", exact_wavefunction),
        ("coupling-ratio robustness", second_order_robustness),
        ("sampled depolarized profile", sampled_mixed_profile),
        ("characteristic-function invariants", characteristic_invariants),
        ("displacement quadrature oracle", displacement_oracle),
        ("mixed-state round trip", mixed_round_trip),
        ("momentum consistency", momentum_consistency),
        ("bit-identical reruns", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = run();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!(
            "{status} [{}] {name}: {} ({:.2} s)",
            i + 1,
            v.detail,
            start.elapsed().as_secs_f64()
        );
        if !v.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

//! Finite-shot measurement simulator.
//!
//! Each probe readout is a Bernoulli trial that succeeds with
//! `p = (1 + v)/2`, where `v` is the exact signal, and then passes through a
//! symmetric bit-flip detector. The estimator reported back is
//! `2·(observed successes / shots) − 1`, which converges to `(1 − 2e) v`.
//!
//! Draw order is fixed: settings in order, the even signal before the odd
//! one, and for each signal first the true success count, then the flips
//! among successes, then the flips among failures. All three counts are
//! binomial, which is the same distribution as drawing the shots one by one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::response::{Shots, SignalSeries};

/// Readout error used in the reference simulations.
pub const DEFAULT_DETECTOR_ERROR: f64 = 0.01;

const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotConfig {
    pub shots_per_setting: u64,
    #[serde(default = "default_detector_error")]
    pub detector_error: f64,
    pub rng_seed: u64,
}

fn default_detector_error() -> f64 {
    DEFAULT_DETECTOR_ERROR
}

impl ShotConfig {
    pub fn new(shots_per_setting: u64, detector_error: f64, rng_seed: u64) -> Result<Self> {
        let cfg = Self {
            shots_per_setting,
            detector_error,
            rng_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots_per_setting == 0 {
            return Err(TomoError::InvalidInput("shots_per_setting must be >= 1".into()));
        }
        if !(0.0..=0.5).contains(&self.detector_error) {
            return Err(TomoError::InvalidInput(format!(
                "detector_error {} outside [0, 0.5]",
                self.detector_error
            )));
        }
        Ok(())
    }
}

fn success_probability(index: usize, value: f64) -> Result<f64> {
    let p = 0.5 * (1.0 + value);
    if !p.is_finite() || !(-PROB_TOL..=1.0 + PROB_TOL).contains(&p) {
        return Err(TomoError::UnphysicalSignal { index, value });
    }
    Ok(p.clamp(0.0, 1.0))
}

fn binomial(rng: &mut ChaCha8Rng, n: u64, p: f64) -> u64 {
    if n == 0 || p == 0.0 {
        return 0;
    }
    if p == 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("p in (0, 1)").sample(rng)
}

fn sample_value(rng: &mut ChaCha8Rng, p: f64, cfg: &ShotConfig) -> f64 {
    let n = cfg.shots_per_setting;
    let successes = binomial(rng, n, p);
    let lost = binomial(rng, successes, cfg.detector_error);
    let gained = binomial(rng, n - successes, cfg.detector_error);
    let observed = successes - lost + gained;
    2.0 * observed as f64 / n as f64 - 1.0
}

/// Simulates the measurement record for every setting of an exact series.
pub fn sample_signal(true_series: &SignalSeries, config: &ShotConfig) -> Result<SignalSeries> {
    config.validate()?;
    if !true_series.shots().is_exact() {
        return Err(TomoError::InvalidInput(
            "sampling requires an exact input series".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut even = Vec::with_capacity(true_series.len());
    let mut odd = Vec::with_capacity(true_series.len());
    for (i, (&e, &o)) in true_series.even().iter().zip(true_series.odd()).enumerate() {
        let pe = success_probability(i, e)?;
        let po = success_probability(i, o)?;
        even.push(sample_value(&mut rng, pe, config));
        odd.push(sample_value(&mut rng, po, config));
    }
    SignalSeries::new(
        true_series.settings().to_vec(),
        even,
        odd,
        Shots::Count(config.shots_per_setting),
        true_series.kind(),
    )
}

/// Undoes the contraction `v → (1 − 2e) v` of a symmetric readout error.
pub fn debias_value(value: f64, detector_error: f64) -> Result<f64> {
    if !(0.0..0.5).contains(&detector_error) {
        return Err(TomoError::InvalidInput(format!(
            "cannot debias with detector_error {detector_error} (need 0 <= e < 0.5)"
        )));
    }
    Ok((value / (1.0 - 2.0 * detector_error)).clamp(-1.0, 1.0))
}

pub fn debias(sampled: &SignalSeries, detector_error: f64) -> Result<SignalSeries> {
    let fix = |v: &[f64]| {
        v.iter()
            .map(|&x| debias_value(x, detector_error))
            .collect::<Result<Vec<_>>>()
    };
    SignalSeries::new(
        sampled.settings().to_vec(),
        fix(sampled.even())?,
        fix(sampled.odd())?,
        sampled.shots(),
        sampled.kind(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::response::{ExperimentSetting, SignalKind};

    fn series(values: &[f64]) -> SignalSeries {
        let settings = (0..values.len()).map(|i| ExperimentSetting::plain(i as f64)).collect();
        SignalSeries::new(
            settings,
            values.to_vec(),
            vec![0.0; values.len()],
            Shots::Exact,
            SignalKind::Plain,
        )
        .unwrap()
    }

    #[test]
    fn noiseless_certain_outcome() {
        for shots in [1, 7, 1000] {
            let cfg = ShotConfig::new(shots, 0.0, 3).unwrap();
            let out = sample_signal(&series(&[1.0, -1.0]), &cfg).unwrap();
            assert_eq!(out.even(), &[1.0, -1.0]);
            assert_eq!(out.shots(), Shots::Count(shots));
        }
    }

    #[test]
    fn detector_error_contracts_mean() {
        // Mixture algebra: observed success probability is p(1−e) + (1−p)e,
        // so the estimator mean is (1 − 2e) v with variance 4 p'(1 − p')/n.
        let (v, e, n) = (0.6, 0.01, 1_000_000u64);
        let p_obs = 0.5 * (1.0 + v) * (1.0 - e) + 0.5 * (1.0 - v) * e;
        let sigma = 2.0 * (p_obs * (1.0 - p_obs) / n as f64).sqrt();
        let cfg = ShotConfig::new(n, e, 11).unwrap();
        let out = sample_signal(&series(&[v]), &cfg).unwrap();
        assert!((out.even()[0] - (1.0 - 2.0 * e) * v).abs() < 3.0 * sigma);
    }

    #[test]
    fn reproducible_for_fixed_seed() {
        let s = series(&[0.2, -0.4, 0.9, 0.0]);
        let cfg = ShotConfig::new(500, 0.01, 42).unwrap();
        let a = sample_signal(&s, &cfg).unwrap();
        let b = sample_signal(&s, &cfg).unwrap();
        assert_eq!(a, b);
        let c = sample_signal(&s, &ShotConfig { rng_seed: 43, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn estimates_stay_in_range() {
        let s = series(&[1.0, -1.0, 0.999, -0.999, 0.0]);
        let cfg = ShotConfig::new(3, 0.5, 1).unwrap();
        let out = sample_signal(&s, &cfg).unwrap();
        for v in out.even().iter().chain(out.odd()) {
            assert!((-1.0..=1.0).contains(v));
        }
    }

    #[test]
    fn spread_matches_binomial_prediction() {
        let v = 0.3;
        let shots = 2000u64;
        let p = 0.5 * (1.0 + v);
        let predicted = 2.0 * (p * (1.0 - p) / shots as f64).sqrt();
        let draws: Vec<f64> = (0..100)
            .map(|seed| {
                let cfg = ShotConfig::new(shots, 0.0, seed).unwrap();
                sample_signal(&series(&[v]), &cfg).unwrap().even()[0]
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let ratio = var.sqrt() / predicted;
        assert!((1.0 / 1.2..=1.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn rejects_unphysical_and_bad_config() {
        let bad = SignalSeries::new(
            vec![ExperimentSetting::plain(0.0)],
            vec![1.2],
            vec![0.0],
            Shots::Count(1),
            SignalKind::Plain,
        )
        .unwrap();
        let cfg = ShotConfig::new(10, 0.0, 0).unwrap();
        assert!(sample_signal(&bad, &cfg).is_err());

        let unphysical_tilde = SignalSeries::new(
            vec![ExperimentSetting::plain(0.0)],
            vec![1.2],
            vec![0.0],
            Shots::Exact,
            SignalKind::Tilde,
        )
        .unwrap();
        assert!(matches!(
            sample_signal(&unphysical_tilde, &cfg),
            Err(TomoError::UnphysicalSignal { .. })
        ));
        assert!(ShotConfig::new(0, 0.0, 0).is_err());
        assert!(ShotConfig::new(1, 0.6, 0).is_err());
    }

    #[test]
    fn debias_examples() {
        assert_eq!(debias_value(0.37, 0.0).unwrap(), 0.37);
        assert!((debias_value(0.49, 0.01).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(debias_value(0.995, 0.01).unwrap(), 1.0);
        assert!(debias_value(0.1, 0.5).is_err());
    }

    #[test]
    fn sample_then_debias_round_trip() {
        let (e, n) = (0.01, 100_000u64);
        let cfg = ShotConfig::new(n, e, 2024).unwrap();

        // Three standard errors of the success fraction, rescaled by the
        // debias factor. The estimator 2·fraction − 1 has twice that spread,
        // so this only amounts to 3σ for strongly polarized signals.
        let v = 0.9;
        let bound = 3.0 * (1.0 / (4.0 * n as f64)).sqrt() / (1.0 - 2.0 * e);
        let out = debias(&sample_signal(&series(&[v]), &cfg).unwrap(), e).unwrap();
        assert!((out.even()[0] - v).abs() < bound);

        // 3σ of the estimator itself for values across the range.
        let values = [-0.8, -0.35, 0.0, 0.4, 0.75];
        let out = debias(&sample_signal(&series(&values), &cfg).unwrap(), e).unwrap();
        for (v, got) in values.iter().zip(out.even()) {
            let p_obs = 0.5 * (1.0 + v) * (1.0 - e) + 0.5 * (1.0 - v) * e;
            let sigma = 2.0 * (p_obs * (1.0 - p_obs) / n as f64).sqrt() / (1.0 - 2.0 * e);
            assert!((got - v).abs() < 3.0 * sigma, "{v}: {got}");
        }
    }
}

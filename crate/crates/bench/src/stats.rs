//! Paired sign-flip permutation test and per-seed sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ssmdisc_core::discretize::Method;

use crate::error::{BenchError, Result};
use crate::model::ModelConfig;
use crate::task::Dataset;
use crate::train::{train, RunMetrics, TrainConfig};

/// Largest sample size tested by full enumeration.
pub const EXACT_LIMIT: usize = 20;
pub const MONTE_CARLO_DRAWS: usize = 100_000;
const MONTE_CARLO_SEED: u64 = 0x5eed_5eed;

/// One-sided paired permutation test of `mean > 0`.
///
/// Counts sign assignments whose mean is at least the observed mean
/// (identity included). Exact for `n ≤ 20`; otherwise a seeded Monte Carlo
/// estimate `(hits + 1) / (draws + 1)`.
pub fn permutation_test(differences: &[f64]) -> Result<f64> {
    let n = differences.len();
    if n == 0 {
        return Err(BenchError::InvalidConfig("permutation test needs at least one difference".into()));
    }
    if differences.iter().any(|d| !d.is_finite()) {
        return Err(ssmdisc_core::Error::NonFinite("paired differences".into()).into());
    }
    let observed: f64 = differences.iter().sum();
    let tol = 1e-12 * differences.iter().map(|d| d.abs()).sum::<f64>();
    let threshold = observed - tol;
    if n <= EXACT_LIMIT {
        let total = 1u64 << n;
        let hits = (0..total)
            .into_par_iter()
            .filter(|mask| {
                let s: f64 = differences
                    .iter()
                    .enumerate()
                    .map(|(i, d)| if mask >> i & 1 == 1 { -d } else { *d })
                    .sum();
                s >= threshold
            })
            .count();
        Ok(hits as f64 / total as f64)
    } else {
        let mut rng = ChaCha20Rng::seed_from_u64(MONTE_CARLO_SEED);
        let mut hits = 0usize;
        for _ in 0..MONTE_CARLO_DRAWS {
            let s: f64 = differences.iter().map(|d| if rng.gen::<bool>() { -d } else { *d }).sum();
            if s >= threshold {
                hits += 1;
            }
        }
        Ok((hits + 1) as f64 / (MONTE_CARLO_DRAWS + 1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub method: String,
    pub baseline: String,
    pub seeds: Vec<u64>,
    /// Per seed, method accuracy minus baseline accuracy.
    pub differences: Vec<f64>,
    pub mean_gain: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub min_gain: f64,
    pub significant: bool,
}

impl SignificanceReport {
    pub fn from_differences(
        method: &str,
        baseline: &str,
        seeds: &[u64],
        differences: Vec<f64>,
        alpha: f64,
        min_gain: f64,
    ) -> Result<Self> {
        let p_value = permutation_test(&differences)?;
        let mean_gain = differences.iter().sum::<f64>() / differences.len() as f64;
        Ok(Self {
            method: method.to_string(),
            baseline: baseline.to_string(),
            seeds: seeds.to_vec(),
            differences,
            mean_gain,
            p_value,
            alpha,
            min_gain,
            significant: p_value < alpha && mean_gain > min_gain,
        })
    }
}

/// Trains `method` on every seed, wrapping failures with the seed.
pub fn run_seeds(cfg: &ModelConfig, tc: &TrainConfig, data: &Dataset, seeds: &[u64]) -> Result<Vec<RunMetrics>> {
    seeds
        .par_iter()
        .map(|&seed| {
            train(cfg, tc, data, seed).map_err(|e| BenchError::Run {
                seed,
                method: cfg.method.to_string(),
                source: Box::new(e),
            })
        })
        .collect()
}

/// Paired accuracy differences of two run sets; both must have seen the same
/// data in the same order.
pub fn paired_differences(runs: &[RunMetrics], baseline: &[RunMetrics]) -> Result<Vec<f64>> {
    runs.iter()
        .zip(baseline)
        .map(|(r, b)| {
            if r.seed != b.seed || r.data_fingerprint != b.data_fingerprint || r.order_fingerprint != b.order_fingerprint {
                return Err(BenchError::InvalidConfig(format!(
                    "runs for seed {} are not paired with the baseline",
                    r.seed
                )));
            }
            Ok(r.best_accuracy - b.best_accuracy)
        })
        .collect()
}

/// Trains method and baseline on each seed and tests the paired gains.
pub fn seed_sweep(
    template: &ModelConfig,
    tc: &TrainConfig,
    data: &Dataset,
    seeds: &[u64],
    method: &Method,
    baseline: &Method,
    alpha: f64,
    min_gain: f64,
) -> Result<(SignificanceReport, Vec<RunMetrics>, Vec<RunMetrics>)> {
    if seeds.len() < 2 {
        return Err(BenchError::InvalidConfig("a seed sweep needs at least 2 seeds".into()));
    }
    let cfg_for = |m: &Method| ModelConfig {
        method: m.clone(),
        ..template.clone()
    };
    let base_runs = run_seeds(&cfg_for(baseline), tc, data, seeds)?;
    let runs = if method == baseline {
        base_runs.clone()
    } else {
        run_seeds(&cfg_for(method), tc, data, seeds)?
    };
    let diffs = paired_differences(&runs, &base_runs)?;
    let report = SignificanceReport::from_differences(&method.to_string(), &baseline.to_string(), seeds, diffs, alpha, min_gain)?;
    Ok((report, runs, base_runs))
}

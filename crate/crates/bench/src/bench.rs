//! Method x seed benchmark table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ssmdisc_core::discretize::Method;
use ssmdisc_core::io::fmt_real;

use crate::error::{BenchError, Result};
use crate::model::ModelConfig;
use crate::stats::{paired_differences, SignificanceReport};
use crate::task::Dataset;
use crate::train::{train, RunMetrics, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_final_accuracy: f64,
    pub mean_best_epoch: f64,
    pub mean_wall_clock_secs: f64,
    pub significance: SignificanceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
    pub runs: Vec<RunMetrics>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; zero for a single value.
fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Trains every method on every seed and compares each against ZOH with the
/// paired permutation test. ZOH is trained as the baseline even when it is
/// not in `methods`.
pub fn benchmark_all(
    data: &Dataset,
    methods: &[Method],
    seeds: &[u64],
    template: &ModelConfig,
    tc: &TrainConfig,
    alpha: f64,
    min_gain: f64,
) -> Result<BenchTable> {
    if methods.is_empty() || seeds.is_empty() {
        return Err(BenchError::InvalidConfig("benchmark needs at least one method and one seed".into()));
    }
    let baseline = Method::Zoh;
    let mut all: Vec<Method> = methods.to_vec();
    if !all.contains(&baseline) {
        all.push(baseline.clone());
    }
    let jobs: Vec<(usize, u64)> = (0..all.len()).flat_map(|m| seeds.iter().map(move |&s| (m, s))).collect();
    let results: Vec<Result<RunMetrics>> = jobs
        .par_iter()
        .map(|&(m, seed)| {
            let cfg = ModelConfig {
                method: all[m].clone(),
                ..template.clone()
            };
            train(&cfg, tc, data, seed).map_err(|e| BenchError::Run {
                seed,
                method: all[m].to_string(),
                source: Box::new(e),
            })
        })
        .collect();
    let mut by_method: BTreeMap<usize, Vec<RunMetrics>> = BTreeMap::new();
    for ((m, _), r) in jobs.iter().zip(results) {
        by_method.entry(*m).or_default().push(r?);
    }
    let base_idx = all.iter().position(|m| *m == baseline).expect("baseline added");
    let base_runs = by_method[&base_idx].clone();
    let mut rows = Vec::with_capacity(methods.len());
    let mut runs = Vec::new();
    for (i, m) in methods.iter().enumerate() {
        let mr = &by_method[&i];
        let acc: Vec<f64> = mr.iter().map(|r| r.best_accuracy).collect();
        let diffs = paired_differences(mr, &base_runs)?;
        rows.push(BenchRow {
            method: m.to_string(),
            mean_accuracy: mean(&acc),
            std_accuracy: std_dev(&acc),
            mean_final_accuracy: mean(&mr.iter().map(|r| r.final_accuracy).collect::<Vec<_>>()),
            mean_best_epoch: mean(&mr.iter().map(|r| r.best_epoch as f64).collect::<Vec<_>>()),
            mean_wall_clock_secs: mean(&mr.iter().map(|r| r.wall_clock_secs).collect::<Vec<_>>()),
            significance: SignificanceReport::from_differences(
                &m.to_string(),
                &baseline.to_string(),
                seeds,
                diffs,
                alpha,
                min_gain,
            )?,
        });
        runs.extend(mr.iter().cloned());
    }
    Ok(BenchTable { rows, runs })
}

impl BenchTable {
    /// Deterministic columns only; timings are in [`BenchTable::timing_csv`].
    pub fn results_csv(&self) -> String {
        let mut s = String::from(
            "method,mean_accuracy,std_accuracy,mean_final_accuracy,mean_best_epoch,mean_gain_vs_zoh,p_value_vs_zoh,significant\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.method,
                fmt_real(r.mean_accuracy),
                fmt_real(r.std_accuracy),
                fmt_real(r.mean_final_accuracy),
                fmt_real(r.mean_best_epoch),
                fmt_real(r.significance.mean_gain),
                fmt_real(r.significance.p_value),
                r.significance.significant
            );
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("method,mean_wall_clock_secs\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{}", r.method, fmt_real(r.mean_wall_clock_secs));
        }
        s
    }

    /// Per-run metrics, one row per method and seed.
    pub fn runs_csv(&self) -> String {
        let mut s = String::from("method,seed,best_accuracy,final_accuracy,best_epoch,final_train_loss\n");
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.method,
                r.seed,
                fmt_real(r.best_accuracy),
                fmt_real(r.final_accuracy),
                r.best_epoch,
                fmt_real(*r.train_loss.last().expect("at least one epoch"))
            );
        }
        s
    }

    /// Whether the mean accuracies follow hold-family ≥ bilinear ≥ ZOH.
    /// Logged only; toy tasks need not reproduce it.
    pub fn ordering_trend(&self) -> Option<String> {
        let acc = |kind: &str| {
            self.rows
                .iter()
                .filter(|r| r.method.split(':').next() == Some(kind))
                .map(|r| r.mean_accuracy)
                .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.max(a))))
        };
        let (zoh, bil) = (acc("zoh")?, acc("bil")?);
        let hold = match (acc("pol"), acc("hoh")) {
            (Some(a), Some(b)) => a.max(b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => return None,
        };
        let holds = hold >= bil && bil >= zoh;
        Some(format!(
            "pol/hoh {} >= bil {} >= zoh {}: {}",
            fmt_real(hold),
            fmt_real(bil),
            fmt_real(zoh),
            if holds { "observed" } else { "not observed" }
        ))
    }
}

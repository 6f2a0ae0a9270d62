//! Mini-batch training with momentum and a cosine-decayed step size.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ssmdisc_core::analysis::gradient_check;
use ssmdisc_core::scan::OutputTrace;

use crate::error::{BenchError, Result};
use crate::model::{argmax, cross_entropy, ForwardPass, FrozenDeltas, Model, ModelConfig, PoolStats};
use crate::task::{Dataset, Split};

const STREAM_INIT: u64 = 1;
const STREAM_ORDER: u64 = 2;
const STREAM_CHECK: u64 = 3;

/// Tolerance of the pre-training gradient check.
pub const GRAD_CHECK_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    pub grad_check: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.05,
            momentum: 0.9,
            clip_norm: 1.0,
            grad_check: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(BenchError::InvalidConfig("epochs and batch size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) || !(0.0..1.0).contains(&self.momentum)
            || !(self.clip_norm >= 0.0 && self.clip_norm.is_finite())
        {
            return Err(BenchError::InvalidConfig(format!(
                "learning rate {}, momentum {} or clip norm {} out of range",
                self.learning_rate, self.momentum, self.clip_norm
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub method: String,
    pub seed: u64,
    pub train_loss: Vec<f64>,
    pub test_accuracy: Vec<f64>,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    /// 1-based.
    pub best_epoch: usize,
    pub wall_clock_secs: f64,
    pub data_fingerprint: String,
    pub order_fingerprint: String,
    pub param_count: usize,
}

impl RunMetrics {
    /// Equality of everything except the wall-clock time.
    pub fn same_results(&self, other: &RunMetrics) -> bool {
        let mut a = self.clone();
        a.wall_clock_secs = other.wall_clock_secs;
        &a == other
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn frozen_for(model: &Model, p: &[f64], split: &Split, batch: &[usize]) -> Result<Option<FrozenDeltas>> {
    if !model.cfg.readout_only() {
        return Ok(None);
    }
    let xs: Vec<&[f64]> = batch.iter().map(|&i| split.sample(i)).collect();
    Ok(Some(model.batch_mean_deltas(p, &xs)?))
}

/// Mean loss gradient over a batch, standardizing with the batch's own
/// pooled statistics (held constant when differentiating).
fn batch_gradient(model: &Model, p: &[f64], split: &Split, batch: &[usize]) -> Result<Vec<f64>> {
    let frozen = frozen_for(model, p, split, batch)?;
    let passes = batch
        .par_iter()
        .map(|&i| model.encode(p, split.sample(i), frozen.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let stats = PoolStats::from_batch(&passes);
    let per: Vec<Result<Vec<f64>>> = passes
        .into_par_iter()
        .zip(batch)
        .map(|(mut pass, &i)| {
            model.head(p, &mut pass, &stats);
            let (_, dl) = cross_entropy(&pass.logits, split.labels[i]);
            model.backward(p, &pass, &dl)
        })
        .collect();
    // reduce in batch order so the sum does not depend on scheduling
    let mut grad = vec![0.0; p.len()];
    for g in per {
        for (a, b) in grad.iter_mut().zip(&g?) {
            *a += b;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|v| *v *= inv);
    Ok(grad)
}

/// Encodes a whole split in order, in batches of `batch_size` (which fixes
/// the frozen RK4 steps).
fn encode_split(model: &Model, p: &[f64], split: &Split, batch_size: usize) -> Result<Vec<ForwardPass>> {
    let idx: Vec<usize> = (0..split.size()).collect();
    let mut passes = Vec::with_capacity(split.size());
    for batch in idx.chunks(batch_size) {
        let frozen = frozen_for(model, p, split, batch)?;
        let enc = batch
            .par_iter()
            .map(|&i| model.encode(p, split.sample(i), frozen.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        passes.extend(enc);
    }
    Ok(passes)
}

/// Pooled-feature statistics of the training split and the mean loss under
/// them.
pub fn training_state(model: &Model, p: &[f64], split: &Split, batch_size: usize) -> Result<(PoolStats, f64)> {
    let mut passes = encode_split(model, p, split, batch_size)?;
    let stats = PoolStats::from_batch(&passes);
    let mut loss = 0.0;
    for (pass, label) in passes.iter_mut().zip(&split.labels) {
        model.head(p, pass, &stats);
        loss += cross_entropy(&pass.logits, *label).0;
    }
    Ok((stats, loss / split.size() as f64))
}

/// Fraction of `split` classified correctly, in batches of `batch_size`.
pub fn evaluate(model: &Model, p: &[f64], stats: &PoolStats, split: &Split, batch_size: usize) -> Result<f64> {
    let idx: Vec<usize> = (0..split.size()).collect();
    let mut correct = 0usize;
    for batch in idx.chunks(batch_size) {
        let frozen = frozen_for(model, p, split, batch)?;
        let hits: Vec<Result<bool>> = batch
            .par_iter()
            .map(|&i| Ok(argmax(&model.forward(p, split.sample(i), frozen.as_ref(), stats)?.logits) == split.labels[i]))
            .collect();
        for h in hits {
            correct += h? as usize;
        }
    }
    Ok(correct as f64 / split.size() as f64)
}

/// Checks `backprop_scan` on the first layer's forward scan of the first
/// training sample against central differences.
fn check_gradients(model: &Model, p: &[f64], data: &Dataset, first: usize, seed: u64) -> Result<()> {
    if model.cfg.readout_only() {
        return Ok(());
    }
    let pass = model.encode(p, data.train.sample(first), None)?;
    let (a, params, input) = model.first_scan(&pass);
    let mut r = rng(seed, STREAM_CHECK);
    let up = OutputTrace {
        channels: input.channels(),
        values: (0..input.as_slice().len()).map(|_| r.gen_range(-1.0..1.0)).collect(),
    };
    let h0 = vec![0.0; input.channels() * a.len()];
    let err = gradient_check(&a, &params, &input, &model.cfg.method, &h0, &up, 1e-5)?;
    if err > GRAD_CHECK_TOL {
        return Err(BenchError::GradientCheck {
            method: model.cfg.method.to_string(),
            error: err,
        });
    }
    Ok(())
}

/// Trains from an initialization and batch order fixed by `seed`.
pub fn train(cfg: &ModelConfig, tc: &TrainConfig, data: &Dataset, seed: u64) -> Result<RunMetrics> {
    tc.validate()?;
    let start = Instant::now();
    let spec = &data.spec;
    let model = Model::new(cfg.clone(), spec.channels, spec.classes, spec.len)?;
    let mut p = model.init(&mut rng(seed, STREAM_INIT));
    let mut velocity = vec![0.0; p.len()];
    let mask = model.readout_range();
    let readout_only = cfg.readout_only();

    let n = data.train.size();
    let batches_per_epoch = n.div_ceil(tc.batch_size);
    let total_steps = (tc.epochs * batches_per_epoch) as f64;
    let mut order_rng = rng(seed, STREAM_ORDER);
    let mut order_hash = Sha256::new();
    let mut train_loss = Vec::with_capacity(tc.epochs);
    let mut test_accuracy = Vec::with_capacity(tc.epochs);
    let mut step = 0usize;

    for epoch in 1..=tc.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut order_rng);
        for i in &order {
            order_hash.update((*i as u64).to_le_bytes());
        }
        if epoch == 1 && tc.grad_check {
            check_gradients(&model, &p, data, order[0], seed)?;
        }
        for batch in order.chunks(tc.batch_size) {
            let mut grad = batch_gradient(&model, &p, &data.train, batch)?;
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if tc.clip_norm > 0.0 && norm > tc.clip_norm {
                let s = tc.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            let lr = tc.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps).cos());
            for (k, ((w, v), g)) in p.iter_mut().zip(velocity.iter_mut()).zip(&grad).enumerate() {
                if readout_only && !mask.contains(&k) {
                    continue;
                }
                *v = tc.momentum * *v - lr * g;
                *w += *v;
            }
            step += 1;
        }
        let diverged = |loss| BenchError::Diverged { epoch, loss };
        if p.iter().any(|w| !w.is_finite()) {
            return Err(diverged(f64::NAN));
        }
        // the epoch's loss is measured on the whole split after its updates
        let (stats, loss) = training_state(&model, &p, &data.train, tc.batch_size)?;
        if !loss.is_finite() {
            return Err(diverged(loss));
        }
        train_loss.push(loss);
        test_accuracy.push(evaluate(&model, &p, &stats, &data.test, tc.batch_size)?);
    }
    let (best_epoch, best_accuracy) = test_accuracy
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, a)| if *a > b.1 { (i, *a) } else { b });
    Ok(RunMetrics {
        method: cfg.method.to_string(),
        seed,
        final_accuracy: *test_accuracy.last().expect("at least one epoch"),
        train_loss,
        test_accuracy,
        best_accuracy,
        best_epoch: best_epoch + 1,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        data_fingerprint: data.fingerprint(),
        order_fingerprint: hex::encode(order_hash.finalize()),
        param_count: model.param_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{generate_task, TaskKind, TaskSpec};
    use ssmdisc_core::discretize::{Method, Rk4InputMode};

    fn small_task() -> Dataset {
        let mut spec = TaskSpec::new(TaskKind::SinusoidClass, 7);
        spec.len = 32;
        spec.train_size = 32;
        spec.test_size = 16;
        generate_task(&spec).unwrap()
    }

    #[test]
    fn frozen_parameters_keep_loss_constant() {
        let data = small_task();
        for m in [Method::Bilinear, Method::Rk4(Rk4InputMode::LinearInterp)] {
            let tc = TrainConfig {
                epochs: 3,
                learning_rate: 0.0,
                ..TrainConfig::default()
            };
            let r = train(&ModelConfig::new(m), &tc, &data, 3).unwrap();
            for l in &r.train_loss {
                assert!((l - r.train_loss[0]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn same_seed_same_metrics() {
        let data = small_task();
        let tc = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let cfg = ModelConfig::new(Method::Zoh);
        let a = train(&cfg, &tc, &data, 11).unwrap();
        let b = train(&cfg, &tc, &data, 11).unwrap();
        assert!(a.same_results(&b));
        let c = train(&cfg, &tc, &data, 12).unwrap();
        assert_ne!(a.order_fingerprint, c.order_fingerprint);
        let other = train(&ModelConfig::new(Method::Foh), &tc, &data, 11).unwrap();
        assert_eq!(other.order_fingerprint, a.order_fingerprint);
        assert_eq!(other.data_fingerprint, a.data_fingerprint);
    }

    #[test]
    fn divergence_is_reported() {
        let data = small_task();
        let tc = TrainConfig {
            epochs: 5,
            learning_rate: 1e200,
            clip_norm: 0.0,
            grad_check: false,
            ..TrainConfig::default()
        };
        match train(&ModelConfig::new(Method::Zoh), &tc, &data, 1) {
            Err(BenchError::Diverged { epoch, .. }) => assert!(epoch >= 1),
            Err(e) if e.is_numerical() => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_settings() {
        let data = small_task();
        let tc = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(train(&ModelConfig::new(Method::Zoh), &tc, &data, 1).is_err());
    }
}

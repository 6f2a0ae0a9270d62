//! Small selective-SSM classifier.
//!
//! Per layer: input projection `v = W u + b`, per-token step sizes
//! `Δ = floor + (ceiling − floor)·σ(w_Δ ∘ v + b_Δ)`, token-dependent
//! `B_t = W_B v_t + b_B`, `C_t = W_C v_t + b_C`, a diagonal selective scan
//! (optionally a second one over the reversed sequence), skip `D ∘ v`, gate
//! `y ∘ silu(v)`. The last layer is mean-pooled, standardized per channel
//! with batch statistics and read out linearly.

use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use ssmdisc_core::discretize::Method;
use ssmdisc_core::linalg::DiagonalSpectrum;
use ssmdisc_core::scan::{backprop_from_trace, scan_selective, HiddenTrace, OutputTrace, SelectiveParams, TokenSequence};

use crate::error::{BenchError, Result};

pub const MAX_STATE_DIM: usize = 32;
pub const MAX_PARAMS: usize = 50_000;
const VAR_EPS: f64 = 1e-12;

mod method_str {
    use serde::{Deserialize, Deserializer, Serializer};
    use ssmdisc_core::discretize::Method;

    pub fn serialize<S: Serializer>(m: &Method, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&m.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Method, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub state_dim: usize,
    pub width: usize,
    pub layers: usize,
    #[serde(with = "method_str")]
    pub method: Method,
    pub bidirectional: bool,
    pub delta_floor: f64,
    pub delta_ceiling: f64,
    /// Initial steps are spread log-uniformly over this range.
    pub delta_init: (f64, f64),
}

impl ModelConfig {
    pub fn new(method: Method) -> Self {
        Self {
            state_dim: 8,
            width: 8,
            layers: 1,
            method,
            bidirectional: true,
            delta_floor: 1e-4,
            delta_ceiling: 10.0,
            delta_init: (0.01, 0.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::InvalidConfig(m));
        if self.state_dim == 0 || self.state_dim > MAX_STATE_DIM {
            return bad(format!("state dimension {} outside 1..={MAX_STATE_DIM}", self.state_dim));
        }
        if self.width == 0 {
            return bad("width must be positive".into());
        }
        if !(1..=2).contains(&self.layers) {
            return bad(format!("{} layers, expected 1 or 2", self.layers));
        }
        if !(self.delta_floor > 0.0 && self.delta_ceiling > self.delta_floor && self.delta_ceiling.is_finite()) {
            return bad(format!(
                "step range [{}, {}] must be positive and non-empty",
                self.delta_floor, self.delta_ceiling
            ));
        }
        let (lo, hi) = self.delta_init;
        if !(lo > self.delta_floor && hi >= lo && hi < self.delta_ceiling) {
            return bad(format!("initial step range [{lo}, {hi}] must lie inside the step bounds"));
        }
        self.method.validate()?;
        Ok(())
    }

    /// Only the readout is trained: the RK4 scan has no step-size gradient.
    pub fn readout_only(&self) -> bool {
        matches!(self.method, Method::Rk4(_))
    }
}

#[derive(Debug, Clone)]
struct DirLayout {
    w_dt: Range<usize>,
    b_dt: Range<usize>,
    w_b: Range<usize>,
    b_b: Range<usize>,
    w_c: Range<usize>,
    b_c: Range<usize>,
}

#[derive(Debug, Clone)]
struct LayerLayout {
    d_in: usize,
    w_in: Range<usize>,
    b_in: Range<usize>,
    d_skip: Range<usize>,
    dirs: Vec<DirLayout>,
}

#[derive(Debug, Clone)]
struct Layout {
    layers: Vec<LayerLayout>,
    w_out: Range<usize>,
    b_out: Range<usize>,
    total: usize,
}

fn take(pos: &mut usize, n: usize) -> Range<usize> {
    let r = *pos..*pos + n;
    *pos += n;
    r
}

impl Layout {
    fn new(cfg: &ModelConfig, inputs: usize, classes: usize) -> Self {
        let (d, n) = (cfg.width, cfg.state_dim);
        let mut pos = 0;
        let layers = (0..cfg.layers)
            .map(|l| {
                let d_in = if l == 0 { inputs } else { d };
                LayerLayout {
                    d_in,
                    w_in: take(&mut pos, d * d_in),
                    b_in: take(&mut pos, d),
                    d_skip: take(&mut pos, d),
                    dirs: (0..if cfg.bidirectional { 2 } else { 1 })
                        .map(|_| DirLayout {
                            w_dt: take(&mut pos, d),
                            b_dt: take(&mut pos, d),
                            w_b: take(&mut pos, n * d),
                            b_b: take(&mut pos, n),
                            w_c: take(&mut pos, n * d),
                            b_c: take(&mut pos, n),
                        })
                        .collect(),
                }
            })
            .collect();
        let w_out = take(&mut pos, classes * d);
        let b_out = take(&mut pos, classes);
        Self {
            layers,
            w_out,
            b_out,
            total: pos,
        }
    }
}

/// Per-channel centering and scaling of the pooled features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolStats {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl PoolStats {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            inv_std: vec![1.0; width],
        }
    }

    /// Mean and population deviation of the raw pooled features of a batch.
    pub fn from_batch(passes: &[ForwardPass]) -> Self {
        let d = passes[0].raw.len();
        let k = passes.len() as f64;
        let mut mean = vec![0.0; d];
        for pass in passes {
            for (m, r) in mean.iter_mut().zip(&pass.raw) {
                *m += r / k;
            }
        }
        let mut var = vec![0.0; d];
        for pass in passes {
            for ((v, r), m) in var.iter_mut().zip(&pass.raw).zip(&mean) {
                *v += (r - m) * (r - m) / k;
            }
        }
        Self {
            mean,
            inv_std: var.iter().map(|v| 1.0 / (v + VAR_EPS).sqrt()).collect(),
        }
    }
}

/// Per layer and direction, one frozen step size per channel.
pub type FrozenDeltas = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone)]
struct DirCache {
    sig: Vec<f64>,
    params: SelectiveParams,
    input: TokenSequence,
    hidden: HiddenTrace,
    frozen: bool,
}

#[derive(Debug, Clone)]
struct LayerCache {
    u: Vec<f64>,
    v: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    dirs: Vec<DirCache>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    layers: Vec<LayerCache>,
    /// Mean-pooled features before standardization.
    pub raw: Vec<f64>,
    /// Standardized features seen by the readout.
    pub pooled: Vec<f64>,
    inv_std: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub inputs: usize,
    pub classes: usize,
    pub len: usize,
    spectrum: DiagonalSpectrum,
    layout: Layout,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn reverse_rows(v: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    for row in v.chunks(width).rev() {
        out.extend_from_slice(row);
    }
    out
}

/// `out[t, i] = Σ_j m[i, j] x[t, j]` for row-major `m` (`rows x cols`).
fn project(m: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() / cols * rows);
    for xt in x.chunks(cols) {
        for row in m.chunks(cols).take(rows) {
            out.push(row.iter().zip(xt).map(|(a, b)| a * b).sum());
        }
    }
    out
}

/// `project` plus a bias per output row.
fn affine(m: &[f64], bias: &[f64], cols: usize, x: &[f64]) -> Vec<f64> {
    let mut out = project(m, bias.len(), cols, x);
    for row in out.chunks_mut(bias.len()) {
        for (a, b) in row.iter_mut().zip(bias) {
            *a += b;
        }
    }
    out
}

impl Model {
    pub fn new(cfg: ModelConfig, inputs: usize, classes: usize, len: usize) -> Result<Self> {
        cfg.validate()?;
        if inputs == 0 || classes < 2 || len == 0 {
            return Err(BenchError::InvalidConfig("model needs inputs, 2+ classes and a sequence length".into()));
        }
        let layout = Layout::new(&cfg, inputs, classes);
        if layout.total > MAX_PARAMS {
            return Err(BenchError::InvalidConfig(format!(
                "{} parameters exceeds the limit of {MAX_PARAMS}",
                layout.total
            )));
        }
        let spectrum = DiagonalSpectrum::new((0..cfg.state_dim).map(|n| -((n + 1) as f64)).collect())?;
        Ok(Self {
            cfg,
            inputs,
            classes,
            len,
            spectrum,
            layout,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    /// Indices trained in readout-only mode.
    pub fn readout_range(&self) -> Range<usize> {
        self.layout.w_out.start..self.layout.b_out.end
    }

    pub fn init(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut p = vec![0.0; self.layout.total];
        let mut normal = |r: &Range<usize>, scale: f64, p: &mut Vec<f64>| {
            for v in &mut p[r.clone()] {
                let z: f64 = rng.sample(StandardNormal);
                *v = scale * z;
            }
        };
        let d = self.cfg.width as f64;
        let span = self.cfg.delta_ceiling - self.cfg.delta_floor;
        // RK4 steps are frozen, so keep them inside its stability interval
        let (lo, mut hi) = self.cfg.delta_init;
        if self.cfg.readout_only() {
            hi = hi.min(2.0 / self.cfg.state_dim as f64).max(lo);
        }
        for l in &self.layout.layers {
            normal(&l.w_in, 1.0 / (l.d_in as f64).sqrt(), &mut p);

            for dir in &l.dirs {
                normal(&dir.w_dt, 0.1, &mut p);
                normal(&dir.w_b, 1.0 / d.sqrt(), &mut p);
                normal(&dir.w_c, 1.0 / d.sqrt(), &mut p);
                normal(&dir.b_c, 1.0 / (self.cfg.state_dim as f64).sqrt(), &mut p);
                p[dir.b_b.clone()].iter_mut().for_each(|v| *v = 1.0);
                // initial steps spread log-uniformly over [lo, hi]
                let k = dir.b_dt.len();
                for (i, v) in p[dir.b_dt.clone()].iter_mut().enumerate() {
                    let frac = if k > 1 { i as f64 / (k - 1) as f64 } else { 0.5 };
                    let delta = (lo.ln() + frac * (hi.ln() - lo.ln())).exp();
                    let s = (delta - self.cfg.delta_floor) / span;
                    *v = (s / (1.0 - s)).ln();
                }
            }
        }
        normal(&self.layout.w_out.clone(), 1.0 / d.sqrt(), &mut p);
        p
    }

    fn dir_forward(
        &self,
        p: &[f64],
        dl: &DirLayout,
        v: &[f64],
        reverse: bool,
        frozen: Option<&[f64]>,
    ) -> Result<(Vec<f64>, DirCache)> {
        let (d, n, len) = (self.cfg.width, self.cfg.state_dim, v.len() / self.cfg.width);
        let vin = if reverse { reverse_rows(v, d) } else { v.to_vec() };
        let span = self.cfg.delta_ceiling - self.cfg.delta_floor;
        let (w_dt, b_dt) = (&p[dl.w_dt.clone()], &p[dl.b_dt.clone()]);
        let mut sig = vec![0.0; len * d];
        let mut deltas = vec![0.0; len * d];
        for t in 0..len {
            for c in 0..d {
                let k = t * d + c;
                sig[k] = sigmoid(w_dt[c] * vin[k] + b_dt[c]);
                deltas[k] = match frozen {
                    Some(f) => f[c],
                    None => self.cfg.delta_floor + span * sig[k],
                };
            }
        }
        let params = SelectiveParams {
            deltas,
            b: Some(affine(&p[dl.w_b.clone()], &p[dl.b_b.clone()], d, &vin)),
            c: Some(affine(&p[dl.w_c.clone()], &p[dl.b_c.clone()], d, &vin)),
        };
        let input = TokenSequence::new(len, d, vin)?;
        let (y, hidden) = scan_selective(&self.spectrum, &params, &input, &self.cfg.method, &vec![0.0; d * n])?;
        let y = if reverse { reverse_rows(&y.values, d) } else { y.values };
        Ok((
            y,
            DirCache {
                sig,
                params,
                input,
                hidden,
                frozen: frozen.is_some(),
            },
        ))
    }

    /// Forward pass through the first `upto` layers (all when `None`).
    fn run(&self, p: &[f64], x: &[f64], frozen: Option<&FrozenDeltas>, upto: Option<usize>) -> Result<ForwardPass> {
        let d = self.cfg.width;
        let mut u = x.to_vec();
        let mut caches = Vec::with_capacity(self.cfg.layers);
        let upto = upto.unwrap_or(self.layout.layers.len());
        for (li, l) in self.layout.layers.iter().enumerate().take(upto) {
            let mut v = project(&p[l.w_in.clone()], d, l.d_in, &u);
            let b_in = &p[l.b_in.clone()];
            for vt in v.chunks_mut(d) {
                for (a, b) in vt.iter_mut().zip(b_in) {
                    *a += b;
                }
            }
            let skip = &p[l.d_skip.clone()];
            let mut y: Vec<f64> = v.iter().enumerate().map(|(k, vk)| skip[k % d] * vk).collect();
            let mut dirs = Vec::with_capacity(l.dirs.len());
            for (di, dl) in l.dirs.iter().enumerate() {
                let f = frozen.and_then(|f| f.get(li)).map(|f| f[di].as_slice());
                let (yd, cache) = self.dir_forward(p, dl, &v, di == 1, f)?;
                for (a, b) in y.iter_mut().zip(&yd) {
                    *a += b;
                }
                dirs.push(cache);
            }
            let mut z: Vec<f64> = y.iter().zip(&v).map(|(yk, vk)| yk * vk * sigmoid(*vk)).collect();
            if li > 0 {
                for (a, b) in z.iter_mut().zip(&u) {
                    *a += b;
                }
            }
            caches.push(LayerCache { u, v, y, z: z.clone(), dirs });
            u = z;
        }
        let len = u.len() / d;
        let mut pooled = vec![0.0; d];
        for zt in u.chunks(d) {
            for (a, b) in pooled.iter_mut().zip(zt) {
                *a += b / len as f64;
            }
        }
        Ok(ForwardPass {
            layers: caches,
            raw: pooled,
            pooled: Vec::new(),
            inv_std: Vec::new(),
            logits: Vec::new(),
        })
    }

    /// Everything up to the pooled features; `head` finishes the pass.
    pub fn encode(&self, p: &[f64], x: &[f64], frozen: Option<&FrozenDeltas>) -> Result<ForwardPass> {
        self.run(p, x, frozen, None)
    }

    /// Standardizes the pooled features with `stats` and applies the readout.
    pub fn head(&self, p: &[f64], pass: &mut ForwardPass, stats: &PoolStats) {
        pass.pooled = pass.raw.iter().zip(&stats.mean).zip(&stats.inv_std).map(|((r, m), s)| (r - m) * s).collect();
        pass.inv_std = stats.inv_std.clone();
        let mut logits = project(&p[self.layout.w_out.clone()], self.classes, self.cfg.width, &pass.pooled);
        for (a, b) in logits.iter_mut().zip(&p[self.layout.b_out.clone()]) {
            *a += b;
        }
        pass.logits = logits;
    }

    pub fn forward(&self, p: &[f64], x: &[f64], frozen: Option<&FrozenDeltas>, stats: &PoolStats) -> Result<ForwardPass> {
        let mut pass = self.encode(p, x, frozen)?;
        self.head(p, &mut pass, stats);
        Ok(pass)
    }

    /// Per layer and direction, the mean step size of each channel over a
    /// batch, layer by layer (later layers see the earlier frozen steps).
    pub fn batch_mean_deltas(&self, p: &[f64], batch: &[&[f64]]) -> Result<FrozenDeltas> {
        let d = self.cfg.width;
        let mut frozen: FrozenDeltas = Vec::new();
        for li in 0..self.layout.layers.len() {
            let ndirs = self.layout.layers[li].dirs.len();
            let mut sums = vec![vec![0.0; d]; ndirs];
            let mut count = 0usize;
            for x in batch {
                let pass = self.run(p, x, Some(&frozen), Some(li + 1))?;
                for (di, dc) in pass.layers[li].dirs.iter().enumerate() {
                    for (k, delta) in dc.params.deltas.iter().enumerate() {
                        sums[di][k % d] += delta;
                    }
                }
                count += pass.layers[li].v.len() / d;
            }
            frozen.push(sums.into_iter().map(|s| s.into_iter().map(|v| v / count as f64).collect()).collect());
        }
        Ok(frozen)
    }

    /// Gradient of a loss with `∂loss/∂logits = dlogits`, in parameter layout.
    pub fn backward(&self, p: &[f64], pass: &ForwardPass, dlogits: &[f64]) -> Result<Vec<f64>> {
        let d = self.cfg.width;
        let n = self.cfg.state_dim;
        let mut g = vec![0.0; self.layout.total];
        let w_out = &p[self.layout.w_out.clone()];
        for (k, dl) in dlogits.iter().enumerate() {
            g[self.layout.b_out.start + k] += dl;
            for c in 0..d {
                g[self.layout.w_out.start + k * d + c] += dl * pass.pooled[c];
            }
        }
        if self.cfg.readout_only() {
            return Ok(g);
        }
        let mut gnorm = vec![0.0; d];
        for (k, dl) in dlogits.iter().enumerate() {
            for c in 0..d {
                gnorm[c] += dl * w_out[k * d + c];
            }
        }
        // statistics are constants of the pass
        let gpool: Vec<f64> = gnorm.iter().zip(&pass.inv_std).map(|(a, s)| a * s).collect();
        let last = pass.layers.last().expect("at least one layer");
        let len = last.z.len() / d;
        let mut gz: Vec<f64> = (0..len * d).map(|k| gpool[k % d] / len as f64).collect();
        let span = self.cfg.delta_ceiling - self.cfg.delta_floor;

        for (li, (l, cache)) in self.layout.layers.iter().zip(&pass.layers).enumerate().rev() {
            let mut gu = if li > 0 { gz.clone() } else { Vec::new() };
            let skip = &p[l.d_skip.clone()];
            let mut gy = vec![0.0; len * d];
            let mut gv = vec![0.0; len * d];
            for k in 0..len * d {
                let v = cache.v[k];
                let s = sigmoid(v);
                gy[k] = gz[k] * v * s;
                gv[k] = gz[k] * cache.y[k] * s * (1.0 + v * (1.0 - s)) + gy[k] * skip[k % d];
                g[l.d_skip.start + k % d] += gy[k] * v;
            }
            for (di, (dl, dc)) in l.dirs.iter().zip(&cache.dirs).enumerate() {
                let reverse = di == 1;
                let up = OutputTrace {
                    channels: d,
                    values: if reverse { reverse_rows(&gy, d) } else { gy.clone() },
                };
                let gs = backprop_from_trace(
                    &self.spectrum,
                    &dc.params,
                    &dc.input,
                    &self.cfg.method,
                    &vec![0.0; d * n],
                    &dc.hidden,
                    &up,
                )?;
                let vin = dc.input.as_slice();
                let mut gvin = gs.x;
                let w_dt = &p[dl.w_dt.clone()];
                if !dc.frozen {
                    for k in 0..len * d {
                        let c = k % d;
                        let graw = gs.deltas[k] * span * dc.sig[k] * (1.0 - dc.sig[k]);
                        g[dl.w_dt.start + c] += graw * vin[k];
                        g[dl.b_dt.start + c] += graw;
                        gvin[k] += graw * w_dt[c];
                    }
                }
                for (range, bias, gw) in [(&dl.w_b, &dl.b_b, &gs.b), (&dl.w_c, &dl.b_c, &gs.c)] {
                    let w = &p[range.clone()];
                    for t in 0..len {
                        for i in 0..n {
                            let gt = gw[t * n + i];
                            g[bias.start + i] += gt;
                            for c in 0..d {
                                g[range.start + i * d + c] += gt * vin[t * d + c];
                                gvin[t * d + c] += w[i * d + c] * gt;
                            }
                        }
                    }
                }
                let gvin = if reverse { reverse_rows(&gvin, d) } else { gvin };
                for (a, b) in gv.iter_mut().zip(&gvin) {
                    *a += b;
                }
            }
            let w_in = &p[l.w_in.clone()];
            if li > 0 {
                for t in 0..len {
                    for c in 0..d {
                        let gvk = gv[t * d + c];
                        for j in 0..l.d_in {
                            gu[t * l.d_in + j] += w_in[c * l.d_in + j] * gvk;
                        }
                    }
                }
            }
            for t in 0..len {
                for c in 0..d {
                    let gvk = gv[t * d + c];
                    g[l.b_in.start + c] += gvk;
                    for j in 0..l.d_in {
                        g[l.w_in.start + c * l.d_in + j] += gvk * cache.u[t * l.d_in + j];
                    }
                }
            }
            gz = gu;
        }
        Ok(g)
    }

    /// Forward direction of the first layer: the scan inputs the gradient
    /// check runs on.
    pub fn first_scan(&self, pass: &ForwardPass) -> (DiagonalSpectrum, SelectiveParams, TokenSequence) {
        let dc = &pass.layers[0].dirs[0];
        (self.spectrum.clone(), dc.params.clone(), dc.input.clone())
    }
}

/// Softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() + m - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use ssmdisc_core::discretize::{PolyBasis, Rk4InputMode};

    fn loss_of(model: &Model, p: &[f64], x: &[f64], label: usize) -> f64 {
        cross_entropy(&model.forward(p, x, None, &stats()).unwrap().logits, label).0
    }

    fn stats() -> PoolStats {
        PoolStats {
            mean: vec![0.1, -0.2, 0.05],
            inv_std: vec![2.0, 0.5, 3.0],
        }
    }

    fn check_model_gradient(cfg: ModelConfig) {
        let model = Model::new(cfg, 2, 3, 10).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let p = model.init(&mut rng);
        let x: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pass = model.forward(&p, &x, None, &stats()).unwrap();
        let (_, dl) = cross_entropy(&pass.logits, 1);
        let g = model.backward(&p, &pass, &dl).unwrap();
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..p.len() {
            let h = 1e-6 * p[i].abs().max(1.0);
            let mut q = p.clone();
            q[i] += h;
            let up = loss_of(&model, &q, &x, 1);
            q[i] -= 2.0 * h;
            let down = loss_of(&model, &q, &x, 1);
            let fd = (up - down) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-5 * scale.max(1.0) + 1e-4 * fd.abs(),
                "{}: param {i}: fd {fd} vs {}",
                model.cfg.method,
                g[i]
            );
        }
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        for m in [Method::Zoh, Method::Foh, Method::Bilinear, Method::Polynomial(PolyBasis::CubicClosedForm), Method::HigherOrderHold(2)] {
            let mut cfg = ModelConfig::new(m);
            cfg.width = 3;
            cfg.state_dim = 2;
            check_model_gradient(cfg.clone());
            cfg.layers = 2;
            cfg.bidirectional = false;
            check_model_gradient(cfg);
        }
    }

    #[test]
    fn rk4_trains_readout_only() {
        let model = Model::new(ModelConfig::new(Method::Rk4(Rk4InputMode::LinearInterp)), 1, 2, 16).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let p = model.init(&mut rng);
        let x: Vec<f64> = (0..16).map(|t| (t as f64 * 0.4).sin()).collect();
        let frozen = model.batch_mean_deltas(&p, &[&x]).unwrap();
        let pass = model.forward(&p, &x, Some(&frozen), &PoolStats::identity(8)).unwrap();
        let (_, dl) = cross_entropy(&pass.logits, 0);
        let g = model.backward(&p, &pass, &dl).unwrap();
        let r = model.readout_range();
        assert!(g[..r.start].iter().all(|v| *v == 0.0));
        assert!(g[r].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn config_limits() {
        let mut cfg = ModelConfig::new(Method::Zoh);
        cfg.state_dim = 33;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::new(Method::Zoh);
        cfg.layers = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::new(Method::Zoh);
        cfg.width = 400;
        cfg.state_dim = 32;
        assert!(Model::new(cfg, 1, 2, 64).is_err());
        let m = Model::new(ModelConfig::new(Method::Zoh), 1, 2, 64).unwrap();
        assert!(m.param_count() < 1000);
    }

    #[test]
    fn cross_entropy_gradient() {
        let (l, g) = cross_entropy(&[1.0, 2.0, 0.5], 2);
        let z = 1f64.exp() + 2f64.exp() + 0.5f64.exp();
        assert!((l - (z.ln() - 0.5)).abs() < 1e-14);
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
        assert_eq!(argmax(&[0.1, 3.0, 3.0]), 1);
    }
}

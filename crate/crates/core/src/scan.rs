//! Recurrences `h_t = Ā h_{t−1} + (input taps)`, `y_t = C h_t`.
//!
//! Token `t` (1-based) is the left sample of step `t`; the step ends at time
//! `tΔ` and produces `h_t`. Right-hand taps read token `t+1`; the last step
//! holds the last token.

use rayon::prelude::*;

use crate::discretize::{
    rk4_scalar, scalar_coefficients, scalar_coefficients_with_derivative, DiscreteSystem, Method,
    Rk4InputMode, Rk4Operator, StateMatrix,
};
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DiagonalSpectrum};
use crate::oracle::InputSignal;

/// `L x D` row-major sequence of input vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    len: usize,
    channels: usize,
    data: Vec<f64>,
}

impl TokenSequence {
    pub fn new(len: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if len == 0 || channels == 0 {
            return Err(Error::Shape(format!("empty token sequence {len}x{channels}")));
        }
        if data.len() != len * channels {
            return Err(Error::Shape(format!(
                "{} values for {len} tokens of {channels} channels",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("token sequence".into()));
        }
        Ok(Self { len, channels, data })
    }

    /// Single-channel sequence.
    pub fn scalar(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Token `t`, 0-based.
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn reversed(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for t in (0..self.len).rev() {
            data.extend_from_slice(self.row(t));
        }
        Self { data, ..*self }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * s).collect(),
            ..*self
        }
    }
}

/// Hidden states `h_1 … h_L`, `L x N` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenTrace {
    pub n: usize,
    pub states: Vec<f64>,
}

impl HiddenTrace {
    pub fn len(&self) -> usize {
        self.states.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// `h_{t+1}` for 0-based `t`.
    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.n..(t + 1) * self.n]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }
}

/// Outputs `y_1 … y_L`, `L x D_out` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputTrace {
    pub channels: usize,
    pub values: Vec<f64>,
}

impl OutputTrace {
    pub fn len(&self) -> usize {
        self.values.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.channels..(t + 1) * self.channels]
    }

    pub fn reversed(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for t in (0..self.len()).rev() {
            values.extend_from_slice(self.row(t));
        }
        Self {
            channels: self.channels,
            values,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &OutputTrace) -> f64 {
        assert_eq!(self.values.len(), other.values.len());
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn to_sequence(&self) -> Result<TokenSequence> {
        TokenSequence::new(self.len(), self.channels, self.values.clone())
    }
}

/// Where the samples of each step come from.
trait StepInputs: Sync {
    fn steps(&self) -> usize;
    fn channels(&self) -> usize;
    fn left(&self, t: usize, out: &mut [f64]) -> Result<()>;
    fn mid(&self, t: usize, out: &mut [f64]) -> Result<()>;
    fn right(&self, t: usize, out: &mut [f64]) -> Result<()>;
}

struct Tokens<'a> {
    x: &'a TokenSequence,
    hold: bool,
}

impl StepInputs for Tokens<'_> {
    fn steps(&self) -> usize {
        self.x.len()
    }

    fn channels(&self) -> usize {
        self.x.channels()
    }

    fn left(&self, t: usize, out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(self.x.row(t));
        Ok(())
    }

    fn mid(&self, t: usize, out: &mut [f64]) -> Result<()> {
        if self.hold || t + 1 == self.x.len() {
            out.copy_from_slice(self.x.row(t));
        } else {
            for ((o, a), b) in out.iter_mut().zip(self.x.row(t)).zip(self.x.row(t + 1)) {
                *o = 0.5 * (a + b);
            }
        }
        Ok(())
    }

    fn right(&self, t: usize, out: &mut [f64]) -> Result<()> {
        let next = if self.hold { t } else { (t + 1).min(self.x.len() - 1) };
        out.copy_from_slice(self.x.row(next));
        Ok(())
    }
}

struct Sampled<'a> {
    signal: &'a dyn InputSignal,
    delta: f64,
    steps: usize,
}

impl Sampled<'_> {
    fn at(&self, t: f64, lo: f64, hi: f64, out: &mut [f64]) -> Result<()> {
        self.signal.eval_within(t, lo, hi, out)
    }

    fn span(&self, t: usize) -> (f64, f64) {
        (t as f64 * self.delta, (t + 1) as f64 * self.delta)
    }
}

impl StepInputs for Sampled<'_> {
    fn steps(&self) -> usize {
        self.steps
    }

    fn channels(&self) -> usize {
        self.signal.channels()
    }

    fn left(&self, t: usize, out: &mut [f64]) -> Result<()> {
        let (lo, hi) = self.span(t);
        self.at(lo, lo, hi, out)
    }

    fn mid(&self, t: usize, out: &mut [f64]) -> Result<()> {
        let (lo, hi) = self.span(t);
        self.at(0.5 * (lo + hi), lo, hi, out)
    }

    fn right(&self, t: usize, out: &mut [f64]) -> Result<()> {
        let (lo, hi) = self.span(t);
        self.at(hi, lo, hi, out)
    }
}

fn check_h0(h0: &[f64], n: usize) -> Result<()> {
    if h0.len() != n {
        return Err(Error::Shape(format!("initial state has {} entries, expected {n}", h0.len())));
    }
    Ok(())
}

fn check_inputs(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape(format!("input has {got} channels, system expects {expected}")));
    }
    Ok(())
}

fn add_mul(m: &DenseMatrix, x: &[f64], acc: &mut [f64]) {
    for (a, row) in acc.iter_mut().zip(m.as_slice().chunks(m.cols())) {
        *a += row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
    }
}

/// Per-step forcing `v_t` of an LTI system for all steps, `L x N`.
fn lti_forcing(dsys: &DiscreteSystem, src: &dyn StepInputs) -> Result<Vec<f64>> {
    let n = dsys.n();
    let taps = dsys.input_taps();
    let mut xl = vec![0.0; src.channels()];
    let mut xr = vec![0.0; src.channels()];
    let mut v = vec![0.0; src.steps() * n];
    for t in 0..src.steps() {
        let vt = &mut v[t * n..(t + 1) * n];
        src.left(t, &mut xl)?;
        add_mul(&taps.left, &xl, vt);
        if let Some(right) = &taps.right {
            src.right(t, &mut xr)?;
            add_mul(right, &xr, vt);
        }
    }
    Ok(v)
}

fn outputs_of(c: &DenseMatrix, hidden: &HiddenTrace) -> OutputTrace {
    let mut values = vec![0.0; hidden.len() * c.rows()];
    for (t, y) in values.chunks_mut(c.rows()).enumerate() {
        c.mul_vec_into(hidden.state(t), y);
    }
    OutputTrace {
        channels: c.rows(),
        values,
    }
}

/// `h ← Ā h + v`; returns an overflow error tagged with the 1-based step.
fn step_state(a_bar: &StateMatrix, h: &mut [f64], v: &[f64], tmp: &mut [f64], step: usize) -> Result<()> {
    a_bar.apply_into(h, tmp);
    for ((hi, ti), vi) in h.iter_mut().zip(tmp.iter()).zip(v) {
        *hi = ti + vi;
    }
    if h.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Overflow { step })
    }
}

fn run_lti(dsys: &DiscreteSystem, src: &dyn StepInputs, h0: &[f64]) -> Result<(OutputTrace, HiddenTrace)> {
    let n = dsys.n();
    check_h0(h0, n)?;
    check_inputs(dsys.inputs(), src.channels())?;
    let v = lti_forcing(dsys, src)?;
    let mut h = h0.to_vec();
    let mut tmp = vec![0.0; n];
    let mut states = Vec::with_capacity(v.len());
    for (t, vt) in v.chunks(n).enumerate() {
        step_state(&dsys.a_bar, &mut h, vt, &mut tmp, t + 1)?;
        states.extend_from_slice(&h);
    }
    let hidden = HiddenTrace { n, states };
    Ok((outputs_of(&dsys.c, &hidden), hidden))
}

/// Sequential recurrence over a token sequence.
pub fn scan_lti(dsys: &DiscreteSystem, x: &TokenSequence, h0: &[f64]) -> Result<(OutputTrace, HiddenTrace)> {
    run_lti(dsys, &Tokens { x, hold: false }, h0)
}

/// Sequential recurrence driven by exact samples of a continuous signal at
/// `0, Δ, 2Δ, …`.
pub fn scan_lti_signal(
    dsys: &DiscreteSystem,
    signal: &dyn InputSignal,
    steps: usize,
    h0: &[f64],
) -> Result<(OutputTrace, HiddenTrace)> {
    let src = Sampled {
        signal,
        delta: dsys.delta.get(),
        steps,
    };
    run_lti(dsys, &src, h0)
}

fn run_rk4(op: &Rk4Operator, src: &dyn StepInputs, h0: &[f64]) -> Result<(OutputTrace, HiddenTrace)> {
    let n = op.n();
    check_h0(h0, n)?;
    check_inputs(op.inputs(), src.channels())?;
    let ch = src.channels();
    let (mut xl, mut xm, mut xr) = (vec![0.0; ch], vec![0.0; ch], vec![0.0; ch]);
    let mut h = h0.to_vec();
    let mut v = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut states = Vec::with_capacity(src.steps() * n);
    for t in 0..src.steps() {
        src.left(t, &mut xl)?;
        src.mid(t, &mut xm)?;
        src.right(t, &mut xr)?;
        v.iter_mut().for_each(|x| *x = 0.0);
        add_mul(&op.b_left, &xl, &mut v);
        add_mul(&op.b_mid, &xm, &mut v);
        add_mul(&op.b_right, &xr, &mut v);
        step_state(&op.a_bar, &mut h, &v, &mut tmp, t + 1)?;
        states.extend_from_slice(&h);
    }
    let hidden = HiddenTrace { n, states };
    Ok((outputs_of(&op.c, &hidden), hidden))
}

/// RK4 recurrence over tokens. `mode` picks how the midpoint and right taps
/// are formed; exact-signal mode needs [`scan_rk4_signal`].
pub fn scan_rk4(
    op: &Rk4Operator,
    x: &TokenSequence,
    h0: &[f64],
    mode: Rk4InputMode,
) -> Result<(OutputTrace, HiddenTrace)> {
    let hold = match mode {
        Rk4InputMode::LinearInterp => false,
        Rk4InputMode::Hold => true,
        Rk4InputMode::ExactSignal => {
            return Err(Error::InvalidArgument(
                "exact-signal RK4 needs a continuous signal, not tokens".into(),
            ))
        }
    };
    run_rk4(op, &Tokens { x, hold }, h0)
}

/// RK4 recurrence with taps evaluated on the signal at `tΔ`, `(t+½)Δ`, `(t+1)Δ`.
pub fn scan_rk4_signal(
    op: &Rk4Operator,
    signal: &dyn InputSignal,
    steps: usize,
    h0: &[f64],
) -> Result<(OutputTrace, HiddenTrace)> {
    let src = Sampled {
        signal,
        delta: op.delta.get(),
        steps,
    };
    run_rk4(op, &src, h0)
}

/// Affine map `h ↦ P h + q`.
#[derive(Debug, Clone)]
struct Affine {
    p: StateMatrix,
    q: Vec<f64>,
}

impl Affine {
    fn apply(&self, h: &[f64], out: &mut [f64]) {
        self.p.apply_into(h, out);
        for (o, q) in out.iter_mut().zip(&self.q) {
            *o += q;
        }
    }
}

/// Composition of the per-step maps `h ↦ Ā h + v_t` over one block,
/// `(A₂, b₂) ∘ (A₁, b₁) = (A₂A₁, A₂b₁ + b₂)`.
fn compose_block(a_bar: &StateMatrix, v: &[f64], n: usize) -> Affine {
    let mut p = match a_bar {
        StateMatrix::Dense(_) => StateMatrix::Dense(DenseMatrix::identity(n)),
        StateMatrix::Diagonal(_) => StateMatrix::Diagonal(
            DiagonalSpectrum::new(vec![1.0; n]).expect("unit diagonal is finite"),
        ),
    };
    let mut q = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for vt in v.chunks(n) {
        p = match (a_bar, &p) {
            (StateMatrix::Dense(a), StateMatrix::Dense(pm)) => StateMatrix::Dense(a * pm),
            (StateMatrix::Diagonal(a), StateMatrix::Diagonal(pd)) => StateMatrix::Diagonal(
                DiagonalSpectrum::new(a.values().iter().zip(pd.values()).map(|(x, y)| x * y).collect())
                    .unwrap_or_else(|_| pd.clone()),
            ),
            _ => unreachable!("block summary keeps the storage of Ā"),
        };
        a_bar.apply_into(&q, &mut tmp);
        for ((qi, ti), vi) in q.iter_mut().zip(&tmp).zip(vt) {
            *qi = ti + vi;
        }
    }
    Affine { p, q }
}

/// Blocked associative scan.
///
/// Per-step maps are composed inside each block, block summaries are chained
/// sequentially to get the state entering every block, and each block then
/// replays its steps from that state. Blocks run on the rayon pool; the
/// arithmetic per block does not depend on the worker count.
pub fn scan_blocked(
    dsys: &DiscreteSystem,
    x: &TokenSequence,
    h0: &[f64],
    block: usize,
) -> Result<(OutputTrace, HiddenTrace)> {
    if block == 0 {
        return Err(Error::InvalidArgument("block size must be at least 1".into()));
    }
    let n = dsys.n();
    check_h0(h0, n)?;
    check_inputs(dsys.inputs(), x.channels())?;
    let v = lti_forcing(dsys, &Tokens { x, hold: false })?;
    let chunk = block * n;

    let summaries: Vec<Affine> = v
        .par_chunks(chunk)
        .map(|vb| compose_block(&dsys.a_bar, vb, n))
        .collect();

    let mut starts = Vec::with_capacity(summaries.len());
    let mut h = h0.to_vec();
    let mut next = vec![0.0; n];
    for s in &summaries {
        starts.push(h.clone());
        s.apply(&h, &mut next);
        std::mem::swap(&mut h, &mut next);
    }

    let blocks: Vec<Result<Vec<f64>>> = v
        .par_chunks(chunk)
        .zip(starts.par_iter())
        .enumerate()
        .map(|(k, (vb, start))| {
            let mut h = start.clone();
            let mut tmp = vec![0.0; n];
            let mut out = Vec::with_capacity(vb.len());
            for (i, vt) in vb.chunks(n).enumerate() {
                step_state(&dsys.a_bar, &mut h, vt, &mut tmp, k * block + i + 1)?;
                out.extend_from_slice(&h);
            }
            Ok(out)
        })
        .collect();
    let mut states = Vec::with_capacity(v.len());
    for b in blocks {
        states.extend(b?);
    }
    let hidden = HiddenTrace { n, states };
    Ok((outputs_of(&dsys.c, &hidden), hidden))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Combine {
    #[default]
    Sum,
    Concat,
}

/// Forward scan of `x` plus a backward scan of reversed `x` (re-reversed),
/// both from a zero state.
pub fn scan_bidirectional(
    fwd: &DiscreteSystem,
    bwd: &DiscreteSystem,
    x: &TokenSequence,
    combine: Combine,
) -> Result<OutputTrace> {
    let (yf, _) = scan_lti(fwd, x, &vec![0.0; fwd.n()])?;
    let (yb, _) = scan_lti(bwd, &x.reversed(), &vec![0.0; bwd.n()])?;
    let yb = yb.reversed();
    match combine {
        Combine::Sum => {
            if yf.channels != yb.channels {
                return Err(Error::Shape(format!(
                    "cannot sum {} forward and {} backward output channels",
                    yf.channels, yb.channels
                )));
            }
            Ok(OutputTrace {
                channels: yf.channels,
                values: yf.values.iter().zip(&yb.values).map(|(a, b)| a + b).collect(),
            })
        }
        Combine::Concat => {
            let channels = yf.channels + yb.channels;
            let mut values = Vec::with_capacity(yf.len() * channels);
            for t in 0..yf.len() {
                values.extend_from_slice(yf.row(t));
                values.extend_from_slice(yb.row(t));
            }
            Ok(OutputTrace { channels, values })
        }
    }
}

/// Input-dependent parameters of the diagonal selective scan.
///
/// `deltas` is `L x D` (one step per token and input channel); `b` and `c`
/// are `L x N` input and readout weights shared across channels, all ones
/// when absent.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveParams {
    pub deltas: Vec<f64>,
    pub b: Option<Vec<f64>>,
    pub c: Option<Vec<f64>>,
}

impl SelectiveParams {
    fn validate(&self, len: usize, channels: usize, n: usize) -> Result<()> {
        if self.deltas.len() != len * channels {
            return Err(Error::Shape(format!(
                "{} step sizes for {len} tokens x {channels} channels",
                self.deltas.len()
            )));
        }
        if let Some(bad) = self.deltas.iter().position(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "step size {} at token {}, channel {} is not positive",
                self.deltas[bad],
                bad / channels + 1,
                bad % channels
            )));
        }
        for (name, w) in [("B", &self.b), ("C", &self.c)] {
            if let Some(w) = w {
                if w.len() != len * n {
                    return Err(Error::Shape(format!("{name} has {} entries, expected {len}x{n}", w.len())));
                }
            }
        }
        Ok(())
    }
}

fn weight(w: &Option<Vec<f64>>, t: usize, i: usize, n: usize) -> f64 {
    w.as_ref().map_or(1.0, |w| w[t * n + i])
}

fn pole_at(e: Error, step: usize, channel: usize) -> Error {
    match e {
        Error::Singular { .. } => Error::BilinearPole { step, channel },
        e => e,
    }
}

/// Fused selective scan over a diagonal spectrum.
///
/// State is `D x N` (one copy of the spectrum per input channel); per step
/// and channel the scalar `(ā, b̄)` pair is formed from `Δ_t` and consumed
/// immediately. `h0` is `D x N`; outputs are `L x D`.
pub fn scan_selective(
    a: &DiagonalSpectrum,
    params: &SelectiveParams,
    x: &TokenSequence,
    m: &Method,
    h0: &[f64],
) -> Result<(OutputTrace, HiddenTrace)> {
    m.validate()?;
    let (len, ch, n) = (x.len(), x.channels(), a.len());
    params.validate(len, ch, n)?;
    check_h0(h0, ch * n)?;
    let rk4_hold = match m {
        Method::Rk4(Rk4InputMode::ExactSignal) => {
            return Err(Error::InvalidArgument("exact-signal RK4 needs a continuous signal".into()))
        }
        Method::Rk4(mode) => Some(*mode == Rk4InputMode::Hold),
        _ => None,
    };
    let mut h = h0.to_vec();
    let mut states = Vec::with_capacity(len * ch * n);
    let mut ys = Vec::with_capacity(len * ch);
    for t in 0..len {
        let xt = x.row(t);
        for d in 0..ch {
            let delta = params.deltas[t * ch + d];
            let hd = &mut h[d * n..(d + 1) * n];
            for (i, (&ai, hi)) in a.values().iter().zip(hd.iter_mut()).enumerate() {
                let u = weight(&params.b, t, i, n) * xt[d];
                *hi = match rk4_hold {
                    None => {
                        let (ab, g) = scalar_coefficients(m, ai, delta).map_err(|e| pole_at(e, t + 1, d))?;
                        ab * *hi + g * u
                    }
                    Some(hold) => {
                        let k = rk4_scalar(ai, delta);
                        let next = if hold || t + 1 == len {
                            u
                        } else {
                            weight(&params.b, t + 1, i, n) * x.row(t + 1)[d]
                        };
                        k.a_bar * *hi + k.left * u + k.mid * 0.5 * (u + next) + k.right * next
                    }
                };
            }
            if hd.iter().any(|v| !v.is_finite()) {
                return Err(Error::Overflow { step: t + 1 });
            }
            ys.push(
                hd.iter()
                    .enumerate()
                    .map(|(i, hi)| weight(&params.c, t, i, n) * hi)
                    .sum(),
            );
        }
        states.extend_from_slice(&h);
    }
    Ok((
        OutputTrace { channels: ch, values: ys },
        HiddenTrace { n: ch * n, states },
    ))
}

/// Gradients of a scalar loss through [`scan_selective`].
#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveGrads {
    /// `L x D`
    pub deltas: Vec<f64>,
    /// `L x N`
    pub b: Vec<f64>,
    /// `L x N`
    pub c: Vec<f64>,
    /// `L x D`
    pub x: Vec<f64>,
    /// `D x N`
    pub h0: Vec<f64>,
}

/// Reverse-mode gradients of the selective scan given `∂loss/∂y`.
///
/// Supported for ZOH, FOH, BIL and the POL/HOH family; RK4 has no step-size
/// derivative here.
pub fn backprop_scan(
    a: &DiagonalSpectrum,
    params: &SelectiveParams,
    x: &TokenSequence,
    m: &Method,
    h0: &[f64],
    upstream: &OutputTrace,
) -> Result<SelectiveGrads> {
    if let Method::Rk4(_) = m {
        return Err(Error::Unsupported("backpropagation through the RK4 scan".into()));
    }
    let (_, hidden) = scan_selective(a, params, x, m, h0)?;
    backprop_from_trace(a, params, x, m, h0, &hidden, upstream)
}

/// As [`backprop_scan`], reusing the hidden trace of a forward pass.
pub fn backprop_from_trace(
    a: &DiagonalSpectrum,
    params: &SelectiveParams,
    x: &TokenSequence,
    m: &Method,
    h0: &[f64],
    hidden: &HiddenTrace,
    upstream: &OutputTrace,
) -> Result<SelectiveGrads> {
    if let Method::Rk4(_) = m {
        return Err(Error::Unsupported("backpropagation through the RK4 scan".into()));
    }
    let (len, ch, n) = (x.len(), x.channels(), a.len());
    params.validate(len, ch, n)?;
    check_h0(h0, ch * n)?;
    if upstream.channels != ch || upstream.len() != len {
        return Err(Error::Shape("upstream gradient does not match the output trace".into()));
    }
    if hidden.n != ch * n || hidden.len() != len {
        return Err(Error::Shape("hidden trace does not match the scan".into()));
    }
    let mut g = SelectiveGrads {
        deltas: vec![0.0; len * ch],
        b: vec![0.0; len * n],
        c: vec![0.0; len * n],
        x: vec![0.0; len * ch],
        h0: vec![0.0; ch * n],
    };
    // carry = Ā_{t+1} ∘ λ_{t+1}
    let mut carry = vec![0.0; ch * n];
    for t in (0..len).rev() {
        let xt = x.row(t);
        let gy = upstream.row(t);
        let ht = hidden.state(t);
        let hprev = if t == 0 { h0 } else { hidden.state(t - 1) };
        for d in 0..ch {
            let delta = params.deltas[t * ch + d];
            for (i, &ai) in a.values().iter().enumerate() {
                let k = d * n + i;
                let ct = weight(&params.c, t, i, n);
                let bt = weight(&params.b, t, i, n);
                g.c[t * n + i] += gy[d] * ht[k];
                let lambda = gy[d] * ct + carry[k];
                let [ab, beta, dab, dbeta] =
                    scalar_coefficients_with_derivative(m, ai, delta).map_err(|e| pole_at(e, t + 1, d))?;
                g.deltas[t * ch + d] += lambda * (dab * hprev[k] + dbeta * bt * xt[d]);
                g.b[t * n + i] += lambda * beta * xt[d];
                g.x[t * ch + d] += lambda * beta * bt;
                carry[k] = ab * lambda;
            }
        }
    }
    g.h0 = carry;
    Ok(g)
}

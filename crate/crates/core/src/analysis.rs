//! Convergence order, stability mapping, frequency response and method
//! comparison tables.

use std::fmt::Write as _;
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::discretize::{
    discretize, rk4_scalar, scalar_coefficients, ContinuousSystem, DiscreteSystem, Discretized, Method,
    Rk4InputMode, Rk4Operator, StateMatrix, StepSize,
};
use crate::error::{Error, Result};
use crate::io::fmt_real;
use crate::linalg::{DenseMatrix, DiagonalSpectrum};
use crate::oracle::{sample_signal, signal_error_against, simulate_exact, InputSignal, ORACLE_RTOL};
use crate::scan::{scan_lti, scan_rk4, scan_selective, OutputTrace, SelectiveParams, TokenSequence};

/// Errors below this are treated as exact and left out of order fits.
pub const NOISE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub method: String,
    pub deltas: Vec<f64>,
    pub errors: Vec<f64>,
    /// Whether each point entered the fit.
    pub fitted: Vec<bool>,
    pub slope: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(x, y)`; returns `(slope, intercept, R²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    (slope, intercept, r2)
}

fn check_grid(deltas: &[f64]) -> Result<()> {
    if deltas.len() < 4 {
        return Err(Error::InvalidArgument(format!("{} grid points, need at least 4", deltas.len())));
    }
    if deltas.iter().any(|d| !(d.is_finite() && *d > 0.0)) || deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("step grid must be positive and strictly decreasing".into()));
    }
    if deltas[0] / deltas[deltas.len() - 1] < 10.0 {
        return Err(Error::InvalidArgument("step grid must span at least one decade".into()));
    }
    Ok(())
}

/// Global output error of `m` on `[0, t_end]` for every step size in the grid,
/// with exact signal samples on every tap, and the log-log slope of error
/// against step.
///
/// One oracle run covers every grid point: it stops at the union of all
/// sample times. Steps are rounded so that `t_end / Δ` is an integer count.
pub fn convergence_order(
    m: &Method,
    sys: &ContinuousSystem,
    signal: &dyn InputSignal,
    deltas: &[f64],
    t_end: f64,
) -> Result<ConvergenceReport> {
    let errors = grid_errors(&[m.clone()], sys, signal, deltas, t_end)?.remove(0);
    fit_report(m, deltas, errors)
}

fn fit_report(m: &Method, deltas: &[f64], errors: Vec<f64>) -> Result<ConvergenceReport> {
    let fitted: Vec<bool> = errors.iter().map(|e| *e >= NOISE_FLOOR).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = deltas
        .iter()
        .zip(&errors)
        .zip(&fitted)
        .filter(|(_, f)| **f)
        .map(|((d, e), _)| (d.ln(), e.ln()))
        .unzip();
    if xs.len() < 2 {
        return Err(Error::NoiseFloor { floor: NOISE_FLOOR });
    }
    let (slope, _, r_squared) = linear_fit(&xs, &ys);
    Ok(ConvergenceReport {
        method: m.to_string(),
        deltas: deltas.to_vec(),
        errors,
        fitted,
        slope,
        r_squared,
    })
}

/// Errors of every method at every grid step, sharing one oracle run.
fn grid_errors(
    methods: &[Method],
    sys: &ContinuousSystem,
    signal: &dyn InputSignal,
    deltas: &[f64],
    t_end: f64,
) -> Result<Vec<Vec<f64>>> {
    check_grid(deltas)?;
    let steps: Vec<usize> = deltas.iter().map(|d| ((t_end / d).round() as usize).max(1)).collect();
    let mut times: Vec<f64> = deltas
        .iter()
        .zip(&steps)
        .flat_map(|(&d, &l)| (1..=l).map(move |k| k as f64 * d))
        .collect();
    times.sort_by(|a, b| a.total_cmp(b));
    times.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    let end = *times.last().expect("non-empty grid");
    let oracle = simulate_exact(sys, signal, end, ORACLE_RTOL, &vec![0.0; sys.n()], &times)?;
    let lookup = |t: f64| {
        let i = oracle.times.partition_point(|&s| s < t - 1e-12 * t.max(1.0));
        debug_assert!((oracle.times[i] - t).abs() <= 1e-11 * t.max(1.0));
        i
    };
    methods
        .iter()
        .map(|m| {
            deltas
                .iter()
                .zip(&steps)
                .map(|(&d, &l)| {
                    signal_error_against(m, sys, signal, StepSize::new(d)?, l, &oracle, |t| {
                        lookup((t + 1) as f64 * d)
                    })
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub method: String,
    /// `λΔ` per sample.
    pub scaled: Vec<f64>,
    /// `|ā|` per sample.
    pub magnitudes: Vec<f64>,
    pub preserved: bool,
}

/// `|ā|` of the scalar discretization of each `λ`; preserved when all are
/// inside the unit disk.
pub fn check_stability_preservation(m: &Method, samples: &[f64], d: StepSize) -> Result<StabilityVerdict> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no eigenvalue samples".into()));
    }
    m.validate()?;
    let delta = d.get();
    let magnitudes = samples
        .iter()
        .map(|&l| {
            let a_bar = match m {
                Method::Rk4(_) => rk4_scalar(l, delta).a_bar,
                m => scalar_coefficients(m, l, delta)
                    .map_err(|e| match e {
                        Error::Singular { .. } => Error::BilinearPole { step: 0, channel: 0 },
                        e => e,
                    })?
                    .0,
            };
            Ok(a_bar.abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(StabilityVerdict {
        method: m.to_string(),
        scaled: samples.iter().map(|l| l * delta).collect(),
        preserved: magnitudes.iter().all(|a| *a < 1.0),
        magnitudes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyResponse {
    pub omegas: Vec<f64>,
    pub magnitude: Vec<f64>,
    pub phase: Vec<f64>,
}

impl FrequencyResponse {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("omega,magnitude,phase\n");
        for i in 0..self.omegas.len() {
            let _ = writeln!(
                s,
                "{},{},{}",
                fmt_real(self.omegas[i]),
                fmt_real(self.magnitude[i]),
                fmt_real(self.phase[i])
            );
        }
        s
    }
}

/// Complex Gaussian elimination with partial pivoting, `M x = r`.
fn complex_solve(mut m: Vec<Complex64>, mut r: Vec<Complex64>, n: usize) -> Result<Vec<Complex64>> {
    let scale = m.iter().fold(0.0f64, |s, v| s.max(v.norm())).max(f64::MIN_POSITIVE);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i * n + col].norm().total_cmp(&m[j * n + col].norm()))
            .expect("non-empty column");
        if m[piv * n + col].norm() <= 1e-13 * scale {
            return Err(Error::Singular {
                column: col,
                pivot: m[piv * n + col].norm(),
            });
        }
        if piv != col {
            for k in 0..n {
                m.swap(piv * n + k, col * n + k);
            }
            r.swap(piv, col);
        }
        let p = m[col * n + col];
        for i in col + 1..n {
            let f = m[i * n + col] / p;
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for k in col..n {
                let v = m[col * n + k];
                m[i * n + k] -= f * v;
            }
            let v = r[col];
            r[i] -= f * v;
        }
    }
    for i in (0..n).rev() {
        let mut s = r[i];
        for k in i + 1..n {
            s -= m[i * n + k] * r[k];
        }
        r[i] = s / m[i * n + i];
    }
    Ok(r)
}

/// `C (zI − Ā)^{-1} (L + z R)` at `z = e^{iωΔ}`, where `L`/`R` are the
/// left/right input taps of the recurrence. SISO only.
fn transfer(a_bar: &StateMatrix, left: &DenseMatrix, right: Option<&DenseMatrix>, c: &DenseMatrix, delta: f64, omegas: &[f64]) -> Result<FrequencyResponse> {
    let n = a_bar.dim();
    if left.cols() != 1 || c.rows() != 1 {
        return Err(Error::Shape(format!(
            "frequency response needs a single-input single-output system, got {} inputs and {} outputs",
            left.cols(),
            c.rows()
        )));
    }
    if omegas.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || omegas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("frequencies must be non-negative and increasing".into()));
    }
    if let Some(w) = omegas.iter().find(|w| **w * delta >= std::f64::consts::PI) {
        return Err(Error::InvalidArgument(format!("frequency {w} is at or above Nyquist for step {delta}")));
    }
    let a = a_bar.to_dense();
    let mut magnitude = Vec::with_capacity(omegas.len());
    let mut phase = Vec::with_capacity(omegas.len());
    for &w in omegas {
        let z = Complex64::from_polar(1.0, w * delta);
        let mut m = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = Complex64::new(-a[(i, j)], 0.0);
            }
            m[i * n + i] += z;
        }
        let rhs: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(left[(i, 0)], 0.0) + right.map_or(Complex64::new(0.0, 0.0), |r| z * r[(i, 0)]))
            .collect();
        let h = complex_solve(m, rhs, n)?;
        let g: Complex64 = (0..n).map(|i| c[(0, i)] * h[i]).sum();
        magnitude.push(g.norm());
        phase.push(g.arg());
    }
    Ok(FrequencyResponse {
        omegas: omegas.to_vec(),
        magnitude,
        phase,
    })
}

/// Frequency response of an LTI recurrence, including its input taps.
pub fn frequency_response(dsys: &DiscreteSystem, omegas: &[f64]) -> Result<FrequencyResponse> {
    let taps = dsys.input_taps();
    transfer(&dsys.a_bar, &taps.left, taps.right.as_ref(), &dsys.c, dsys.delta.get(), omegas)
}

/// Frequency response of the RK4 recurrence with interpolated midpoint taps.
pub fn frequency_response_rk4(op: &Rk4Operator, omegas: &[f64]) -> Result<FrequencyResponse> {
    let half = op.b_mid.scale(0.5);
    let (left, right) = match op.mode {
        Rk4InputMode::Hold => (&(&op.b_left + &op.b_mid) + &op.b_right, None),
        _ => (&op.b_left + &half, Some(&half + &op.b_right)),
    };
    transfer(&op.a_bar, &left, right.as_ref(), &op.c, op.delta.get(), omegas)
}

/// Frequency response of either kind of discretization.
pub fn frequency_response_of(disc: &Discretized, omegas: &[f64]) -> Result<FrequencyResponse> {
    match disc {
        Discretized::Lti(d) => frequency_response(d, omegas),
        Discretized::Rk4(op) => frequency_response_rk4(op, omegas),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub order: f64,
    pub r_squared: f64,
    pub error_at_smallest: f64,
    pub seconds_per_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub reports: Vec<ConvergenceReport>,
}

impl ComparisonTable {
    /// Orders and errors; deterministic, so timings live in `timing_csv`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,order,r_squared,error_at_smallest\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.method,
                fmt_real(r.order),
                fmt_real(r.r_squared),
                fmt_real(r.error_at_smallest)
            );
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("method,seconds_per_step\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{}", r.method, fmt_real(r.seconds_per_step));
        }
        s
    }

    /// Convergence data only, without timings.
    pub fn errors_csv(&self) -> String {
        let mut s = String::from("method,delta,error,fitted\n");
        for r in &self.reports {
            for i in 0..r.deltas.len() {
                let _ = writeln!(s, "{},{},{},{}", r.method, fmt_real(r.deltas[i]), fmt_real(r.errors[i]), r.fitted[i]);
            }
        }
        s
    }
}

const TIMING_STEPS: usize = 1 << 14;
const TIMING_REPS: usize = 11;

/// Median wall-clock per step of a `2^14`-step scan at step `d`.
pub fn time_per_step(m: &Method, sys: &ContinuousSystem, signal: &dyn InputSignal, d: StepSize) -> Result<f64> {
    let disc = discretize(sys, d, m)?;
    let x = sample_signal(signal, d, TIMING_STEPS)?;
    let h0 = vec![0.0; sys.n()];
    let mut times = Vec::with_capacity(TIMING_REPS);
    for _ in 0..TIMING_REPS {
        let start = Instant::now();
        let y = match &disc {
            Discretized::Lti(s) => scan_lti(s, &x, &h0)?.0,
            Discretized::Rk4(op) => {
                let mode = if op.mode == Rk4InputMode::Hold { Rk4InputMode::Hold } else { Rk4InputMode::LinearInterp };
                scan_rk4(op, &x, &h0, mode)?.0
            }
        };
        std::hint::black_box(&y);
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(|a, b| a.total_cmp(b));
    Ok(times[TIMING_REPS / 2] / TIMING_STEPS as f64)
}

/// Per method: fitted order, error at the smallest step and time per step.
pub fn compare_methods(
    sys: &ContinuousSystem,
    signal: &dyn InputSignal,
    deltas: &[f64],
    methods: &[Method],
    t_end: f64,
) -> Result<ComparisonTable> {
    if methods.is_empty() {
        return Err(Error::InvalidArgument("no methods to compare".into()));
    }
    let errors = grid_errors(methods, sys, signal, deltas, t_end)?;
    let smallest = StepSize::new(*deltas.last().expect("checked grid"))?;
    let mut rows = Vec::with_capacity(methods.len());
    let mut reports = Vec::with_capacity(methods.len());
    for (m, errs) in methods.iter().zip(errors) {
        let report = fit_report(m, deltas, errs)?;
        rows.push(ComparisonRow {
            method: m.to_string(),
            order: report.slope,
            r_squared: report.r_squared,
            error_at_smallest: *report.errors.last().expect("checked grid"),
            seconds_per_step: time_per_step(m, sys, signal, smallest)?,
        });
        reports.push(report);
    }
    Ok(ComparisonTable { rows, reports })
}

/// Worst relative mismatch between `backprop_scan` and central differences
/// of the loss `Σ w ∘ y` with upstream weights `w`.
///
/// Each entry's error is scaled by `max(|fd|, 1e-2 · max|fd|)` over its
/// gradient group so that near-zero entries do not amplify difference noise.
pub fn gradient_check(
    a: &DiagonalSpectrum,
    params: &SelectiveParams,
    x: &TokenSequence,
    m: &Method,
    h0: &[f64],
    upstream: &OutputTrace,
    step: f64,
) -> Result<f64> {
    let g = crate::scan::backprop_scan(a, params, x, m, h0, upstream)?;
    let loss = |p: &SelectiveParams, x: &TokenSequence, h0: &[f64]| -> Result<f64> {
        let (y, _) = scan_selective(a, p, x, m, h0)?;
        Ok(y.values.iter().zip(&upstream.values).map(|(a, b)| a * b).sum())
    };
    let central = |f: &dyn Fn(f64) -> Result<f64>, v: f64| -> Result<f64> {
        let h = step * v.abs().max(1.0);
        Ok((f(v + h)? - f(v - h)?) / (2.0 * h))
    };
    let mut worst: f64 = 0.0;
    let mut group = |analytic: &[f64], numeric: Vec<f64>| {
        let scale = numeric.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        for (a, n) in analytic.iter().zip(&numeric) {
            let denom = n.abs().max(1e-2 * scale).max(f64::MIN_POSITIVE);
            worst = worst.max((a - n).abs() / denom);
        }
    };

    let fd = (0..params.deltas.len())
        .map(|i| {
            central(
                &|v| {
                    let mut p = params.clone();
                    p.deltas[i] = v;
                    loss(&p, x, h0)
                },
                params.deltas[i],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    group(&g.deltas, fd);

    let ones = vec![1.0; x.len() * a.len()];
    for which in 0..2 {
        let base = if which == 0 { &params.b } else { &params.c };
        let base = base.clone().unwrap_or_else(|| ones.clone());
        let fd = (0..base.len())
            .map(|i| {
                central(
                    &|v| {
                        let mut p = params.clone();
                        let mut w = base.clone();
                        w[i] = v;
                        if which == 0 {
                            p.b = Some(w);
                        } else {
                            p.c = Some(w);
                        }
                        loss(&p, x, h0)
                    },
                    base[i],
                )
            })
            .collect::<Result<Vec<_>>>()?;
        group(if which == 0 { &g.b } else { &g.c }, fd);
    }

    let fd = (0..x.as_slice().len())
        .map(|i| {
            central(
                &|v| {
                    let mut data = x.as_slice().to_vec();
                    data[i] = v;
                    loss(params, &TokenSequence::new(x.len(), x.channels(), data)?, h0)
                },
                x.as_slice()[i],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    group(&g.x, fd);

    let fd = (0..h0.len())
        .map(|i| {
            central(
                &|v| {
                    let mut h = h0.to_vec();
                    h[i] = v;
                    loss(params, x, &h)
                },
                h0[i],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    group(&g.h0, fd);
    Ok(worst)
}

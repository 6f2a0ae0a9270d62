//! Acceptance criteria, one PASS/FAIL line each. Reference values come from
//! closed forms and brute-force computations written out below, not from the
//! library under test.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssmdisc_bench::stats::permutation_test;
use ssmdisc_core::analysis::{check_stability_preservation, convergence_order, frequency_response, gradient_check};
use ssmdisc_core::discretize::{
    bil_matrices, discretize, discretize_diag, zoh_matrices, ContinuousSystem, DiscreteSystem, Discretized, Method,
    Rk4InputMode, StateMatrix, StepSize,
};
use ssmdisc_core::linalg::{DenseMatrix, DiagonalSpectrum};
use ssmdisc_core::oracle::{global_error, AnalyticSignal, ReconstructionMode};
use ssmdisc_core::scan::{scan_blocked, scan_lti, scan_selective, OutputTrace, SelectiveParams, TokenSequence};
use ssmdisc_core::Error;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || format!("{name}: got {got}, want {want} (tol {tol:e})"))
}

fn step(d: f64) -> StepSize {
    StepSize::new(d).unwrap()
}

fn scalar(a: f64) -> ContinuousSystem {
    ContinuousSystem::scalar(a, 1.0, 1.0).unwrap()
}

fn lti(d: Discretized) -> DiscreteSystem {
    match d {
        Discretized::Lti(s) => s,
        Discretized::Rk4(_) => panic!("expected an LTI discretization"),
    }
}

fn method(s: &str) -> Method {
    s.parse().unwrap()
}

/// `(ā, b̄)` of a scalar system.
fn scalar_pair(m: &str, a: f64, delta: f64) -> (f64, f64) {
    let d = lti(discretize(&scalar(a), step(delta), &method(m)).unwrap());
    (d.a_bar.to_dense().as_slice()[0], d.b_bar.as_slice()[0])
}

fn zero_system(n: usize, b: &[f64]) -> ContinuousSystem {
    ContinuousSystem::new(
        StateMatrix::Dense(DenseMatrix::zeros(n, n)),
        DenseMatrix::column(b).unwrap(),
        DenseMatrix::new(1, n, vec![1.0; n]).unwrap(),
    )
    .unwrap()
}

fn max_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let tol = 1e-9;
    let e = (-1f64).exp();
    // scalar closed forms for a = −1, Δ = 1
    let zoh_b = (e - 1.0) / -1.0;
    let foh_b = e - 1.0 + 1.0;

    let (ab, bb) = scalar_pair("zoh", -1.0, 1.0);
    close("zoh a_bar", ab, e, tol)?;
    close("zoh b_bar", bb, zoh_b, tol)?;
    close("zoh b_bar digits", bb, 0.632120559, tol)?;
    let direct = zoh_matrices(&scalar(-1.0), step(1.0)).unwrap();
    ensure(direct == lti(discretize(&scalar(-1.0), step(1.0), &Method::Zoh).unwrap()), || {
        "discretize(zoh) differs from zoh_matrices".into()
    })?;

    let z = lti(discretize(&zero_system(2, &[1.0, 2.0]), step(0.5), &Method::Zoh).unwrap());
    ensure(max_diff(&z.a_bar.to_dense(), &DenseMatrix::identity(2)) <= tol, || "zoh A=0: a_bar != I".into())?;
    ensure(max_diff(&z.b_bar, &DenseMatrix::column(&[0.5, 1.0]).unwrap()) <= tol, || "zoh A=0: b_bar != 0.5 B".into())?;

    let diag = ContinuousSystem::new(
        StateMatrix::Diagonal(DiagonalSpectrum::new(vec![-1.0, -2.0]).unwrap()),
        DenseMatrix::column(&[1.0, 1.0]).unwrap(),
        DenseMatrix::new(1, 2, vec![1.0, 1.0]).unwrap(),
    )
    .unwrap();
    let d = lti(discretize(&diag, step(1.0), &Method::Zoh).unwrap());
    close("zoh diag b0", d.b_bar.as_slice()[0], 1.0 - e, tol)?;
    close("zoh diag b1", d.b_bar.as_slice()[1], (1.0 - (-2f64).exp()) / 2.0, tol)?;

    let (_, bb) = scalar_pair("foh", -1.0, 1.0);
    close("foh b_bar", bb, foh_b, tol)?;
    let f = lti(discretize(&zero_system(1, &[3.0]), step(1.0), &Method::Foh).unwrap());
    close("foh A=0 b_bar", f.b_bar.as_slice()[0], 1.5, tol)?;

    // bilinear: ā = (1 + aΔ/2)/(1 − aΔ/2), b̄ = Δ/(1 − aΔ/2)
    let (ab, bb) = scalar_pair("bil", -2.0, 1.0);
    close("bil a_bar", ab, (1.0 - 1.0) / (1.0 + 1.0), tol)?;
    close("bil b_bar", bb, 1.0 / (1.0 + 1.0), tol)?;
    let b0 = lti(discretize(&zero_system(2, &[1.0, -1.0]), step(0.7), &Method::Bilinear).unwrap());
    ensure(max_diff(&b0.a_bar.to_dense(), &DenseMatrix::identity(2)) <= tol, || "bil A=0: a_bar != I".into())?;
    ensure(max_diff(&b0.b_bar, &DenseMatrix::column(&[0.7, -0.7]).unwrap()) <= tol, || "bil A=0: b_bar != ΔB".into())?;
    match bil_matrices(&scalar(1.0), step(2.0)) {
        Err(err @ (Error::Singular { .. } | Error::BilinearPole { .. })) => ensure(err.is_numerical(), || "pole not numerical".into())?,
        other => return Err(format!("bil a=1, Δ=2: expected a singularity error, got {other:?}")),
    }

    let (_, bb) = scalar_pair("pol", -1.0, 1.0);
    close("pol cubic b_bar", bb, zoh_b + 0.5 * foh_b, tol)?;
    close("pol cubic digits", bb, 0.816060280, tol)?;
    let (_, zb) = scalar_pair("zoh", -1.3, 0.4);
    let (_, pb) = scalar_pair("pol:1", -1.3, 0.4);
    close("pol p=1 vs zoh", pb, zb, tol)?;
    // ∫₀¹ τ dτ by the midpoint rule, exact for a linear integrand
    let k = 1000;
    let integral: f64 = (0..k).map(|i| (i as f64 + 0.5) / k as f64).sum::<f64>() / k as f64;
    let (_, pb) = scalar_pair("pol:0/1", 0.0, 1.0);
    close("pol p=τ, A=0", pb, integral, tol)?;

    let (_, hb) = scalar_pair("hoh:1", -1.0, 1.0);
    close("hoh(1) b_bar", hb, zoh_b + foh_b, tol)?;
    close("hoh(1) digits", hb, 1.0, tol)?;
    // A = 0, Δ = 1: Σ_{i≤n} φ_{i+1}(0)/i! = Σ 1/((i+1)! i!)
    let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
    let want: f64 = (0..=2).map(|i| 1.0 / (fact(i + 1) * fact(i))).sum();
    let (_, hb) = scalar_pair("hoh:2", 0.0, 1.0);
    close("hoh(2), A=0", hb, want, tol)?;
    let (za, zb) = scalar_pair("zoh", -0.8, 0.3);
    let (ha, hb) = scalar_pair("hoh:0", -0.8, 0.3);
    close("hoh(0) a_bar", ha, za, 1e-12)?;
    close("hoh(0) b_bar", hb, zb, 1e-12)?;

    // RK4 with zero input: run the four stages by hand
    let (a, dt) = (-1.0, 1.0);
    let h = 1.0;
    let k1 = a * h;
    let k2 = a * (h + dt / 2.0 * k1);
    let k3 = a * (h + dt / 2.0 * k2);
    let k4 = a * (h + dt * k3);
    let mult = h + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    let Discretized::Rk4(op) = discretize(&scalar(a), step(dt), &method("rk4")).unwrap() else {
        return Err("rk4 did not give an RK4 operator".into());
    };
    close("rk4 multiplier", op.a_bar.to_dense().as_slice()[0], mult, tol)?;
    close("rk4 multiplier digits", mult, 0.375, 1e-15)?;
    let Discretized::Rk4(op0) = discretize(&zero_system(2, &[1.0, 2.0]), step(0.25), &method("rk4")).unwrap() else {
        return Err("rk4 did not give an RK4 operator".into());
    };
    ensure(max_diff(&op0.a_bar.to_dense(), &DenseMatrix::identity(2)) <= tol, || "rk4 A=0: a_bar != I".into())?;
    let taps = &(&op0.b_left + &op0.b_mid) + &op0.b_right;
    ensure(max_diff(&taps, &DenseMatrix::column(&[0.25, 0.5]).unwrap()) <= tol, || "rk4 A=0: taps do not sum to ΔB".into())?;

    let dd = discretize_diag(&DiagonalSpectrum::new(vec![-1.0]).unwrap(), &[1.0], &Method::Zoh, &[1.0]).unwrap();
    close("diag zoh a_bar", dd.a_bar.values()[0], e, tol)?;
    close("diag zoh b_bar", dd.b_bar[0], zoh_b, tol)?;
    for m in Method::all_default() {
        let r = discretize_diag(&DiagonalSpectrum::new(vec![-1.0]).unwrap(), &[1e-8], &m, &[1.0]).unwrap();
        ensure((r.a_bar.values()[0] - 1.0).abs() <= 2e-8, || format!("{m}: ā at Δ=1e-8 is {}", r.a_bar.values()[0]))?;
        ensure(r.b_bar[0].abs() <= 2e-8, || format!("{m}: b̄ at Δ=1e-8 is {}", r.b_bar[0]))?;
    }
    Ok("ZOH 0.632120559, FOH 0.367879441, BIL (0, 0.5), POL 0.816060280, HOH(1) 1.0, RK4 0.375".into())
}

fn random_stable_diag(rng: &mut ChaCha8Rng) -> ContinuousSystem {
    let n = rng.gen_range(1..=8);
    let m = rng.gen_range(1..=2);
    ContinuousSystem::new(
        StateMatrix::Diagonal(DiagonalSpectrum::new((0..n).map(|_| -rng.gen_range(0.01..5.0)).collect()).unwrap()),
        DenseMatrix::new(n, m, (0..n * m).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
        DenseMatrix::new(1, n, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
    )
    .unwrap()
}

/// `M − sI` with `s` above the row-sum bound of `M`, so every eigenvalue has
/// negative real part.
fn random_stable_dense(rng: &mut ChaCha8Rng, n: usize) -> ContinuousSystem {
    let raw = DenseMatrix::new(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let shift = raw.norm_inf() + rng.gen_range(0.05..1.0);
    let a = &raw - &DenseMatrix::identity(n).scale(shift);
    ContinuousSystem::new(
        StateMatrix::Dense(a),
        DenseMatrix::new(n, 1, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
        DenseMatrix::new(1, n, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
    )
    .unwrap()
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for i in 0..120 {
        let sys = if i < 100 {
            random_stable_diag(&mut rng)
        } else {
            let n = rng.gen_range(1..=8);
            random_stable_dense(&mut rng, n)
        };
        let d = step(rng.gen_range(0.01..2.0));
        let z = lti(discretize(&sys, d, &Method::Zoh).unwrap());
        let h = lti(discretize(&sys, d, &Method::HigherOrderHold(0)).unwrap());
        let diff = max_diff(&z.a_bar.to_dense(), &h.a_bar.to_dense()).max(max_diff(&z.b_bar, &h.b_bar));
        worst = worst.max(diff);
        ensure(diff <= 1e-12, || format!("system {i}: HOH(0) differs from ZOH by {diff:e}"))?;
    }
    Ok(format!("100 diagonal + 20 dense systems, max entry difference {worst:e}"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lambdas: Vec<f64> = (0..1000).map(|_| -(10f64).powf(rng.gen_range(-3.0..3.0))).collect();
    let mut largest = 0.0f64;
    for d in [1e-3, 0.1, 1.0, 10.0] {
        let v = check_stability_preservation(&Method::Bilinear, &lambdas, step(d)).unwrap();
        ensure(v.preserved, || format!("Δ={d}: some |ā| ≥ 1"))?;
        largest = v.magnitudes.iter().copied().fold(largest, f64::max);
        let z = check_stability_preservation(&Method::Bilinear, &[0.0], step(d)).unwrap();
        ensure(z.magnitudes[0] == 1.0, || format!("Δ={d}: λ=0 maps to {}", z.magnitudes[0]))?;
    }
    Ok(format!("4000 samples, max |ā| = {largest}"))
}

fn criterion_4() -> Outcome {
    let sys = scalar(-1.0);
    let grid: Vec<f64> = (0..7).map(|i| 0.2 / f64::powi(2.0, i)).collect();
    close("grid end", *grid.last().unwrap(), 0.003125, 1e-15)?;
    let mut summary = Vec::new();
    let gated = [
        (method("zoh"), 1.0, 0.2),
        (method("foh"), 2.0, 0.2),
        (method("bil"), 2.0, 0.2),
        (Method::Rk4(Rk4InputMode::ExactSignal), 4.0, 0.3),
    ];
    for (m, want, tol) in gated {
        let r = convergence_order(&m, &sys, &AnalyticSignal::SinMix, &grid, 10.0).map_err(|e| format!("{m}: {e}"))?;
        close(&format!("{m} slope"), r.slope, want, tol)?;
        ensure(r.r_squared >= 0.99, || format!("{m}: R² {}", r.r_squared))?;
        summary.push(format!("{m} {:.3}", r.slope));
    }
    for m in ["pol", "hoh:1", "hoh:2", "hoh:3"] {
        let r = convergence_order(&method(m), &sys, &AnalyticSignal::SinMix, &grid, 10.0).map_err(|e| format!("{m}: {e}"))?;
        summary.push(format!("{m} {:.3} (reported)", r.slope));
    }
    Ok(summary.join(", "))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let sys = if i % 2 == 0 {
            random_stable_diag(&mut rng)
        } else {
            let n = rng.gen_range(1..=4);
            random_stable_dense(&mut rng, n)
        };
        let len = rng.gen_range(4..=16);
        let xs: Vec<f64> = (0..len * sys.inputs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = TokenSequence::new(len, sys.inputs(), xs).unwrap();
        let d = step(rng.gen_range(0.05..1.0));
        let err = global_error(&Method::Zoh, &sys, &x, d, ReconstructionMode::Hold).map_err(|e| format!("system {i}: {e}"))?;
        worst = worst.max(err);
        ensure(err <= 1e-8, || format!("system {i}: error {err:e}"))?;
    }
    Ok(format!("100 systems, max global error {worst:e}"))
}

fn random_lti(rng: &mut ChaCha8Rng, n: usize) -> DiscreteSystem {
    let raw = DenseMatrix::new(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    DiscreteSystem::from_matrices(
        StateMatrix::Dense(raw.scale(0.97 / raw.norm_inf())),
        DenseMatrix::new(n, 1, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
        DenseMatrix::new(2, n, (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
        step(0.1),
    )
    .unwrap()
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for len in [100usize, 4097, 1 << 16] {
        let sys = random_lti(&mut rng, 6);
        let x = TokenSequence::scalar(&(0..len).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap();
        let h0: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (ys, _) = scan_lti(&sys, &x, &h0).unwrap();
        let scale = ys.max_abs();
        for block in [1, 2, 7, 64, len] {
            let (yb, _) = scan_blocked(&sys, &x, &h0, block).unwrap();
            let rel = yb.max_abs_diff(&ys) / scale;
            worst = worst.max(rel);
            ensure(rel <= 1e-10, || format!("L={len}, block {block}: relative difference {rel:e}"))?;
        }
    }

    // unfused reference: materialize every (ā, b̄) first, then run the recurrence
    let (len, ch, n) = (64, 3, 4);
    let mut fused_worst = 0.0f64;
    for inst in 0..10 {
        let a = DiagonalSpectrum::new((0..n).map(|_| -rng.gen_range(0.1..3.0)).collect()).unwrap();
        let params = SelectiveParams {
            deltas: (0..len * ch).map(|_| rng.gen_range(0.01..1.0)).collect(),
            b: Some((0..len * n).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            c: Some((0..len * n).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        };
        let x = TokenSequence::new(len, ch, (0..len * ch).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let h0: Vec<f64> = (0..ch * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = params.b.as_ref().unwrap();
        let c = params.c.as_ref().unwrap();
        for m in ["zoh", "foh", "bil", "pol", "hoh:2", "hoh:4"] {
            let m = method(m);
            let (yf, _) = scan_selective(&a, &params, &x, &m, &h0).unwrap();
            let mut coeffs = Vec::with_capacity(len * ch);
            for t in 0..len {
                for d in 0..ch {
                    let delta = params.deltas[t * ch + d];
                    let r = discretize_diag(&a, &[delta], &m, &b[t * n..(t + 1) * n]).unwrap();
                    if m == Method::Zoh {
                        for i in 0..n {
                            let z = a.values()[i] * delta;
                            close("zoh ā", r.a_bar.values()[i], z.exp(), 1e-14)?;
                            close("zoh b̄", r.b_bar[i], z.exp_m1() / a.values()[i] * b[t * n + i], 1e-14)?;
                        }
                    }
                    coeffs.push(r);
                }
            }
            let mut h = h0.clone();
            let mut ys = Vec::with_capacity(len * ch);
            for t in 0..len {
                for d in 0..ch {
                    let r = &coeffs[t * ch + d];
                    let mut y = 0.0;
                    for i in 0..n {
                        let k = d * n + i;
                        h[k] = r.a_bar.values()[i] * h[k] + r.b_bar[i] * x.row(t)[d];
                        y += c[t * n + i] * h[k];
                    }
                    ys.push(y);
                }
            }
            let reference = OutputTrace { channels: ch, values: ys };
            let diff = yf.max_abs_diff(&reference) / reference.max_abs().max(1e-300);
            fused_worst = fused_worst.max(diff);
            ensure(diff <= 1e-12, || format!("instance {inst}, {m}: fused vs unfused {diff:e}"))?;
        }
    }
    Ok(format!("blocked max relative {worst:e}; fused max relative {fused_worst:e}"))
}

fn criterion_7() -> Outcome {
    let methods = ["zoh", "foh", "bil", "pol", "hoh:2"];
    let (len, ch, n) = (32, 1, 4);
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let a = DiagonalSpectrum::new((0..n).map(|_| -rng.gen_range(0.1..2.0)).collect()).unwrap();
        let params = SelectiveParams {
            deltas: (0..len * ch).map(|_| rng.gen_range(0.05..1.0)).collect(),
            b: Some((0..len * n).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            c: Some((0..len * n).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        };
        let x = TokenSequence::scalar(&(0..len).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap();
        let h0: Vec<f64> = (0..ch * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let up = OutputTrace {
            channels: ch,
            values: (0..len * ch).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        for m in methods {
            let err = gradient_check(&a, &params, &x, &method(m), &h0, &up, 1e-5).unwrap();
            worst = worst.max(err);
            ensure(err <= 1e-4, || format!("seed {seed}, {m}: relative error {err:e}"))?;
        }
    }
    Ok(format!("20 seeds x 5 methods, max relative error {worst:e}"))
}

fn criterion_8() -> Outcome {
    let sys = scalar(-1.0);
    let mut worst = 0.0f64;
    for d in [0.05, 0.3, 1.0] {
        let bil = bil_matrices(&sys, step(d)).unwrap();
        let nyquist = std::f64::consts::PI / d;
        let omegas: Vec<f64> = (0..50).map(|i| 0.98 * nyquist * i as f64 / 49.0).collect();
        let r = frequency_response(&bil, &omegas).unwrap();
        for (w, mag) in omegas.iter().zip(&r.magnitude) {
            // |H_c(iν)| of 1/(s + 1) at the prewarped frequency
            let nu = 2.0 / d * (w * d / 2.0).tan();
            let want = 1.0 / (1.0 + nu * nu).sqrt();
            worst = worst.max((mag - want).abs());
            close(&format!("Δ={d}, ω={w}"), *mag, want, 1e-10)?;
        }
    }
    Ok(format!("3 steps x 50 frequencies, max deviation {worst:e}"))
}

fn brute_force_p(d: &[f64]) -> f64 {
    let n = d.len();
    let observed: f64 = d.iter().sum();
    let tol = 1e-12 * d.iter().map(|v| v.abs()).sum::<f64>();
    let hits = (0u64..1 << n)
        .filter(|mask| (0..n).map(|i| if mask >> i & 1 == 1 { -d[i] } else { d[i] }).sum::<f64>() >= observed - tol)
        .count();
    hits as f64 / (1u64 << n) as f64
}

fn criterion_9() -> Outcome {
    let p = permutation_test(&[0.5, 0.3, 0.4]).unwrap();
    ensure(p == 0.125, || format!("(0.5, 0.3, 0.4): p = {p}"))?;
    ensure(p == brute_force_p(&[0.5, 0.3, 0.4]), || "brute force disagrees".into())?;
    for n in [1, 5, 20] {
        let p = permutation_test(&vec![0.0; n]).unwrap();
        ensure(p == 1.0, || format!("{n} zero differences: p = {p}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let n = rng.gen_range(1..=14);
        let d: Vec<f64> = (0..n).map(|_| (rng.gen_range(-20..=20) as f64) / 64.0).collect();
        let p = permutation_test(&d).unwrap();
        let scaled = p * f64::powi(2.0, n as i32);
        ensure(scaled == scaled.round(), || format!("{d:?}: p = {p} is not a multiple of 2^-{n}"))?;
        ensure(p == brute_force_p(&d), || format!("{d:?}: p = {p}, brute force {}", brute_force_p(&d)))?;
    }
    let d: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.5)).collect();
    let p = permutation_test(&d).unwrap();
    let scaled = p * f64::powi(2.0, 20);
    ensure(scaled == scaled.round(), || format!("n=20: p = {p} is not a multiple of 2^-20"))?;
    Ok("p(0.5, 0.3, 0.4) = 0.125, zeros give 1, 101 p-values dyadic and equal to brute force".into())
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let out_s = out.to_str().unwrap();
    let code = ssmdisc_cli::run_cli([
        "ssmdisc",
        "bench",
        "--task",
        "sinusoid-class",
        "--methods",
        "zoh,foh,bil,pol,hoh,rk4",
        "--seeds",
        "0..10",
        "--epochs",
        "30",
        "--out",
        out_s,
    ]);
    ensure(code == 0, || format!("bench exited with {code}"))?;

    let results = read(&out.join("results.csv"));
    let rows: Vec<Vec<&str>> = results.lines().skip(1).map(|l| l.split(',').collect()).collect();
    ensure(rows.len() == 6, || format!("{} result rows", rows.len()))?;
    let mut pvals = Vec::new();
    for r in &rows {
        ensure(r.len() == 8 && r.iter().all(|f| !f.is_empty()), || format!("incomplete row {r:?}"))?;
        let p: f64 = r[6].parse().map_err(|_| format!("p-value '{}'", r[6]))?;
        ensure((0.0..=1.0).contains(&p), || format!("{}: p = {p}", r[0]))?;
        pvals.push(format!("{} p={}", r[0], r[6]));
    }
    ensure(rows[0][0] == "zoh" && rows[0][6] == "1.0", || "zoh row must have p = 1".into())?;

    let runs = read(&out.join("runs.csv"));
    let mut count = 0;
    let mut lowest = f64::INFINITY;
    for line in runs.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let acc: f64 = f[2].parse().map_err(|_| format!("accuracy '{}'", f[2]))?;
        lowest = lowest.min(acc);
        ensure(acc >= 0.95, || format!("{} seed {}: accuracy {acc}", f[0], f[1]))?;
        count += 1;
    }
    ensure(count == 60, || format!("{count} runs, expected 60"))?;

    let deterministic = ["results.csv", "runs.csv", "significance.json", "trend.txt", "dataset.bin", "manifest.json"];
    let before: Vec<Vec<u8>> = deterministic.iter().map(|f| std::fs::read(out.join(f)).unwrap()).collect();
    let manifest = out.join("manifest.json");
    let code = ssmdisc_cli::run_cli(["ssmdisc", "replay", "--manifest", manifest.to_str().unwrap()]);
    ensure(code == 0, || format!("replay exited with {code}"))?;
    for (f, old) in deterministic.iter().zip(&before) {
        ensure(std::fs::read(out.join(f)).unwrap() == *old, || format!("{f} changed on replay"))?;
    }
    let trend = read(&out.join("trend.txt"));
    Ok(format!(
        "60 runs, lowest best accuracy {lowest}; {}; replay byte-identical; trend: {}",
        pvals.join(" "),
        trend.trim()
    ))
}

fn main() {
    let criteria: [(u32, &str, f64, fn() -> Outcome); 10] = [
        (1, "method formulas", 1.0, criterion_1),
        (2, "HOH(0) equals ZOH", 5.0, criterion_2),
        (3, "bilinear stability preservation", 1.0, criterion_3),
        (4, "convergence orders", 30.0, criterion_4),
        (5, "ZOH exact under hold reconstruction", 30.0, criterion_5),
        (6, "scan equivalences", 60.0, criterion_6),
        (7, "gradient checks", 60.0, criterion_7),
        (8, "bilinear prewarp identity", 1.0, criterion_8),
        (9, "permutation test", 1.0, criterion_9),
        (10, "toy benchmark protocol", 900.0, criterion_10),
    ];
    let only: Vec<u32> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
        .unwrap_or_default();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, title, budget, check) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let result = result.and_then(|msg| {
            if secs <= budget {
                Ok(msg)
            } else {
                Err(format!("{msg}; took {secs:.1}s, budget {budget}s"))
            }
        });
        match result {
            Ok(msg) => println!("criterion {id:>2} PASS  {title} [{secs:.2}s / {budget}s]: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {title} [{secs:.2}s / {budget}s]: {msg}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

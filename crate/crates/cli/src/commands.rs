use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use ssmdisc_bench::bench::benchmark_all;
use ssmdisc_bench::model::ModelConfig;
use ssmdisc_bench::task::{generate_task, write_cache, TaskKind, TaskSpec};
use ssmdisc_bench::train::TrainConfig;
use ssmdisc_core::analysis::{check_stability_preservation, compare_methods, frequency_response_of};
use ssmdisc_core::discretize::{discretize, Discretized, Method, StepSize};
use ssmdisc_core::io::{
    discretized_from_json, discretized_to_json, fmt_real, outputs_to_csv, read_text, system_from_json, tokens_from_csv,
    write_text,
};
use ssmdisc_core::oracle::AnalyticSignal;
use ssmdisc_core::plot::{Chart, Scale, Series};
use ssmdisc_core::scan::{scan_blocked, scan_lti, scan_rk4, OutputTrace, TokenSequence};
use ssmdisc_core::Error;

use crate::manifest::{sha256_file, FileDigest, RunManifest, TOOL};
use crate::{
    BenchArgs, CliError, Command, CompareArgs, DiscretizeArgs, FreqArgs, Result, ScanArgs, StabilityArgs,
};

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Usage(msg.into()))
}

/// Files read and written by one command.
#[derive(Default)]
struct Ctx {
    inputs: Vec<FileDigest>,
    outputs: Vec<PathBuf>,
    nondeterministic: Vec<PathBuf>,
}

impl Ctx {
    fn read(&mut self, path: &Path) -> Result<String> {
        let text = read_text(path)?;
        self.inputs.push(FileDigest {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(text.as_bytes())),
        });
        Ok(text)
    }

    fn write(&mut self, path: &Path, text: &str) -> Result<()> {
        write_text(path, text)?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    fn write_timing(&mut self, path: &Path, text: &str) -> Result<()> {
        write_text(path, text)?;
        self.nondeterministic.push(path.to_path_buf());
        Ok(())
    }
}

/// What a command reports back for its manifest.
struct Outcome {
    config: Value,
    seed: Option<u64>,
    manifest: Option<PathBuf>,
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Replay(a) => replay(&a.manifest),
        cmd => run(absolutize(cmd)?).map(|_| ()),
    }
}

fn abs(p: &mut PathBuf) -> Result<()> {
    *p = std::path::absolute(&*p).map_err(|e| Error::Io {
        path: p.display().to_string(),
        detail: e.to_string(),
    })?;
    Ok(())
}

/// Makes every path absolute so manifests replay from any directory.
fn absolutize(mut cmd: Command) -> Result<Command> {
    match &mut cmd {
        Command::Discretize(a) => {
            abs(&mut a.system)?;
            abs(&mut a.out)?;
        }
        Command::Scan(a) => {
            abs(&mut a.system)?;
            abs(&mut a.input)?;
            abs(&mut a.out)?;
        }
        Command::Compare(a) => {
            abs(&mut a.system)?;
            abs(&mut a.out)?;
        }
        Command::Stability(a) => {
            if let Some(o) = &mut a.out {
                abs(o)?;
            }
        }
        Command::Freq(a) => {
            abs(&mut a.system)?;
            if let Some(o) = &mut a.out {
                abs(o)?;
            }
        }
        Command::Bench(a) => abs(&mut a.out)?,
        Command::Replay(a) => abs(&mut a.manifest)?,
    }
    Ok(cmd)
}

/// Runs an absolutized command and writes its manifest; returns the
/// manifest path when one was written.
fn run(cmd: Command) -> Result<Option<PathBuf>> {
    let mut ctx = Ctx::default();
    let out = match &cmd {
        Command::Discretize(a) => discretize_cmd(a, &mut ctx)?,
        Command::Scan(a) => scan_cmd(a, &mut ctx)?,
        Command::Compare(a) => compare_cmd(a, &mut ctx)?,
        Command::Stability(a) => stability_cmd(a, &mut ctx)?,
        Command::Freq(a) => freq_cmd(a, &mut ctx)?,
        Command::Bench(a) => bench_cmd(a, &mut ctx)?,
        Command::Replay(_) => return usage("a manifest cannot describe a replay"),
    };
    let Some(path) = out.manifest else {
        return Ok(None);
    };
    let manifest = RunManifest {
        tool: TOOL.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: cmd,
        config: out.config,
        seed: out.seed,
        inputs: ctx.inputs,
        outputs: ctx.outputs.iter().map(|p| FileDigest::of(p)).collect::<Result<_>>()?,
        nondeterministic_outputs: ctx.nondeterministic,
    };
    manifest.write(&path)?;
    Ok(Some(path))
}

fn replay(path: &Path) -> Result<()> {
    let m = RunManifest::read(path)?;
    let fail = |detail: String| CliError::Replay {
        path: path.display().to_string(),
        detail,
    };
    for input in &m.inputs {
        if sha256_file(&input.path)? != input.sha256 {
            return Err(fail(format!("input {} changed since the run", input.path.display())));
        }
    }
    run(m.command.clone())?;
    let changed: Vec<String> = m
        .outputs
        .iter()
        .map(|o| Ok((sha256_file(&o.path)? != o.sha256).then(|| o.path.display().to_string())))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    if !changed.is_empty() {
        return Err(fail(format!("outputs differ: {}", changed.join(", "))));
    }
    println!("replayed {}: {} outputs identical", path.display(), m.outputs.len());
    Ok(())
}

fn beside(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

fn name(p: &Path) -> String {
    p.display().to_string()
}

fn parse_method(s: &str) -> Result<Method> {
    Ok(s.parse::<Method>()?)
}

/// Folds `--hoh-order` and `--pol-basis` into the method name.
fn resolve_method(method: &str, hoh_order: Option<usize>, pol_basis: Option<&str>) -> Result<Method> {
    let base = method.trim().to_ascii_lowercase();
    let spec = match (hoh_order, pol_basis) {
        (Some(_), Some(_)) => return usage("--hoh-order and --pol-basis cannot be combined"),
        (Some(n), None) if base == "hoh" => format!("hoh:{n}"),
        (Some(_), None) => return usage("--hoh-order applies only to --method hoh"),
        (None, Some(b)) if base == "pol" => format!("pol:{b}"),
        (None, Some(_)) => return usage("--pol-basis applies only to --method pol"),
        (None, None) => base,
    };
    parse_method(&spec)
}

fn method_of(disc: &Discretized) -> (String, f64) {
    match disc {
        Discretized::Lti(d) => (d.method.to_string(), d.delta.get()),
        Discretized::Rk4(op) => (Method::Rk4(op.mode).to_string(), op.delta.get()),
    }
}

fn discretize_cmd(a: &DiscretizeArgs, ctx: &mut Ctx) -> Result<Outcome> {
    let m = resolve_method(&a.method, a.hoh_order, a.pol_basis.as_deref())?;
    let sys = system_from_json(&ctx.read(&a.system)?, &name(&a.system))?;
    let disc = discretize(&sys, StepSize::new(a.delta)?, &m)?;
    ctx.write(&a.out, &discretized_to_json(&disc))?;
    Ok(Outcome {
        config: json!({ "method": m.to_string(), "delta": a.delta }),
        seed: None,
        manifest: Some(beside(&a.out)),
    })
}

fn scan_cmd(a: &ScanArgs, ctx: &mut Ctx) -> Result<Outcome> {
    let text = ctx.read(&a.system)?;
    let sname = name(&a.system);
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        source_name: sname.clone(),
        detail: e.to_string(),
    })?;
    let disc = if value.get("method").is_some() {
        if a.method.is_some() || a.delta.is_some() {
            return usage(format!("{sname} is already discretized; drop --method and --delta"));
        }
        discretized_from_json(&text, &sname)?
    } else {
        let (Some(m), Some(d)) = (&a.method, a.delta) else {
            return usage(format!("{sname} is a continuous system; pass --method and --delta"));
        };
        discretize(&system_from_json(&text, &sname)?, StepSize::new(d)?, &parse_method(m)?)?
    };
    if a.blocked.is_some() && matches!(disc, Discretized::Rk4(_)) {
        return usage("--blocked is not available for rk4");
    }
    let x = tokens_from_csv(&ctx.read(&a.input)?, &name(&a.input))?;
    let scan = |x: &TokenSequence| -> Result<OutputTrace> {
        Ok(match &disc {
            Discretized::Lti(s) => {
                let h0 = vec![0.0; s.n()];
                match a.blocked {
                    Some(k) => scan_blocked(s, x, &h0, k)?.0,
                    None => scan_lti(s, x, &h0)?.0,
                }
            }
            Discretized::Rk4(op) => scan_rk4(op, x, &vec![0.0; op.n()], op.mode)?.0,
        })
    };
    let mut y = scan(&x)?;
    if a.bidirectional {
        let back = scan(&x.reversed())?.reversed();
        for (f, b) in y.values.iter_mut().zip(&back.values) {
            *f += b;
        }
    }
    ctx.write(&a.out, &outputs_to_csv(&y))?;
    let (method, delta) = method_of(&disc);
    Ok(Outcome {
        config: json!({
            "method": method,
            "delta": delta,
            "bidirectional": a.bidirectional,
            "combine": "sum",
            "blocked": a.blocked,
        }),
        seed: None,
        manifest: Some(beside(&a.out)),
    })
}

fn compare_cmd(a: &CompareArgs, ctx: &mut Ctx) -> Result<Outcome> {
    let sys = system_from_json(&ctx.read(&a.system)?, &name(&a.system))?;
    let signal: AnalyticSignal = a.signal.parse()?;
    let methods = a.methods.iter().map(|m| parse_method(m)).collect::<Result<Vec<_>>>()?;
    let mut deltas = a.deltas.clone();
    deltas.sort_by(|x, y| y.total_cmp(x));
    let table = compare_methods(&sys, &signal, &deltas, &methods, a.t_end)?;
    let chart = Chart {
        title: format!("Global error, {signal}"),
        x_label: "step".into(),
        y_label: "max output error".into(),
        x_scale: Scale::Log,
        y_scale: Scale::Log,
        series: table
            .reports
            .iter()
            .map(|r| Series {
                label: r.method.clone(),
                xs: r.deltas.clone(),
                ys: r.errors.clone(),
            })
            .collect(),
    };
    ctx.write(&a.out.join("comparison.csv"), &table.to_csv())?;
    ctx.write(&a.out.join("errors.csv"), &table.errors_csv())?;
    ctx.write(&a.out.join("convergence.svg"), &chart.to_svg())?;
    ctx.write_timing(&a.out.join("timing.csv"), &table.timing_csv())?;
    print!("{}", table.to_csv());
    Ok(Outcome {
        config: json!({
            "signal": signal.to_string(),
            "methods": methods.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
            "deltas": deltas,
            "t_end": a.t_end,
        }),
        seed: None,
        manifest: Some(a.out.join("manifest.json")),
    })
}

fn parse_range(s: &str) -> Result<Vec<f64>> {
    let bad = || CliError::Usage(format!("--lambda-range '{s}' is not A:B:STEPS"));
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, n] = parts[..] else {
        return Err(bad());
    };
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    if n == 0 || !a.is_finite() || !b.is_finite() {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![a]);
    }
    Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect())
}

fn emit(ctx: &mut Ctx, out: Option<&PathBuf>, csv: &str) -> Result<Option<PathBuf>> {
    match out {
        Some(p) => {
            ctx.write(p, csv)?;
            Ok(Some(beside(p)))
        }
        None => {
            print!("{csv}");
            Ok(None)
        }
    }
}

fn stability_cmd(a: &StabilityArgs, ctx: &mut Ctx) -> Result<Outcome> {
    let m = parse_method(&a.method)?;
    let samples = parse_range(&a.lambda_range)?;
    let v = check_stability_preservation(&m, &samples, StepSize::new(a.delta)?)?;
    let mut csv = String::from("lambda,scaled,magnitude\n");
    for i in 0..samples.len() {
        csv += &format!("{},{},{}\n", fmt_real(samples[i]), fmt_real(v.scaled[i]), fmt_real(v.magnitudes[i]));
    }
    let outside = v.magnitudes.iter().filter(|x| **x >= 1.0).count();
    eprintln!(
        "{}: {} of {} samples on or outside the unit disk; stability {}",
        v.method,
        outside,
        samples.len(),
        if v.preserved { "preserved" } else { "not preserved" }
    );
    Ok(Outcome {
        config: json!({ "method": m.to_string(), "lambdas": samples, "delta": a.delta }),
        seed: None,
        manifest: emit(ctx, a.out.as_ref(), &csv)?,
    })
}

fn freq_cmd(a: &FreqArgs, ctx: &mut Ctx) -> Result<Outcome> {
    let m = parse_method(&a.method)?;
    let sys = system_from_json(&ctx.read(&a.system)?, &name(&a.system))?;
    let disc = discretize(&sys, StepSize::new(a.delta)?, &m)?;
    let resp = frequency_response_of(&disc, &a.omegas)?;
    Ok(Outcome {
        config: json!({ "method": m.to_string(), "delta": a.delta, "omegas": a.omegas }),
        seed: None,
        manifest: emit(ctx, a.out.as_ref(), &resp.to_csv())?,
    })
}

/// `0,1,2` or the half-open range `0..10`.
fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || CliError::Usage(format!("--seeds '{s}' is not a list or range of seeds"));
    let seeds: Vec<u64> = match s.split_once("..") {
        Some((a, b)) => {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            (a..b).collect()
        }
        None => s.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?,
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
        return usage(format!("--seeds '{s}' repeats a seed"));
    }
    Ok(seeds)
}

fn bench_cmd(a: &BenchArgs, ctx: &mut Ctx) -> Result<Outcome> {
    let mut spec = TaskSpec::new(a.task.parse::<TaskKind>()?, a.seed);
    spec.classes = a.classes.unwrap_or(spec.classes);
    spec.len = a.len.unwrap_or(spec.len);
    spec.noise = a.noise.unwrap_or(spec.noise);
    spec.train_size = a.train_size.unwrap_or(spec.train_size);
    spec.test_size = a.test_size.unwrap_or(spec.test_size);
    let methods = a.methods.iter().map(|m| parse_method(m)).collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = methods.iter().map(|m| m.to_string()).collect();
    if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
        return usage("--methods lists a method twice");
    }
    let seeds = parse_seeds(&a.seeds)?;
    let defaults = TrainConfig::default();
    let tc = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size.unwrap_or(defaults.batch_size),
        learning_rate: a.lr.unwrap_or(defaults.learning_rate),
        ..defaults
    };
    let mut model = ModelConfig::new(Method::Zoh);
    model.state_dim = a.state_dim.unwrap_or(model.state_dim);
    model.width = a.width.unwrap_or(model.width);
    model.layers = a.layers.unwrap_or(model.layers);
    model.bidirectional = !a.unidirectional;

    let data = generate_task(&spec)?;
    let cache = a.out.join("dataset.bin");
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: name(&a.out),
        detail: e.to_string(),
    })?;
    write_cache(&data, &cache)?;
    ctx.outputs.push(cache);

    let table = benchmark_all(&data, &methods, &seeds, &model, &tc, a.alpha, a.min_gain)?;
    let trend = table
        .ordering_trend()
        .unwrap_or_else(|| "ordering trend needs zoh, bil and pol or hoh".into());
    let significance: Vec<_> = table.rows.iter().map(|r| &r.significance).collect();
    ctx.write(&a.out.join("results.csv"), &table.results_csv())?;
    ctx.write(&a.out.join("runs.csv"), &table.runs_csv())?;
    ctx.write(
        &a.out.join("significance.json"),
        &(serde_json::to_string_pretty(&significance).expect("reports serialize") + "\n"),
    )?;
    ctx.write(&a.out.join("trend.txt"), &format!("{trend}\n"))?;
    ctx.write_timing(&a.out.join("timing.csv"), &table.timing_csv())?;
    print!("{}", table.results_csv());
    println!("{trend}");
    Ok(Outcome {
        config: json!({
            "task": spec,
            "model": model,
            "train": tc,
            "methods": names,
            "seeds": seeds,
            "alpha": a.alpha,
            "min_gain": a.min_gain,
            "data_fingerprint": data.fingerprint(),
        }),
        seed: Some(a.seed),
        manifest: Some(a.out.join("manifest.json")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists_and_ranges() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("4, 2").unwrap(), vec![4, 2]);
        assert!(parse_seeds("1,1").is_err());
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("a").is_err());
    }

    #[test]
    fn lambda_ranges() {
        assert_eq!(parse_range("-2:0:3").unwrap(), vec![-2.0, -1.0, 0.0]);
        assert_eq!(parse_range("-1:-5:1").unwrap(), vec![-1.0]);
        assert!(parse_range("-1:0").is_err());
        assert!(parse_range("-1:0:0").is_err());
    }

    #[test]
    fn method_flags_fold_in() {
        assert_eq!(resolve_method("hoh", Some(3), None).unwrap(), Method::HigherOrderHold(3));
        assert_eq!(resolve_method("pol", None, Some("cubic")).unwrap(), parse_method("pol").unwrap());
        assert!(resolve_method("zoh", Some(1), None).is_err());
        assert!(resolve_method("foh", None, Some("1/2")).is_err());
    }
}

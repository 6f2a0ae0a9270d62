//! JSON system files and CSV traces.
//!
//! Reals are written in the shortest form that parses back to the same
//! `f64`, so a write/read round trip is exact.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::discretize::{ContinuousSystem, DiscreteSystem, Discretized, InputCoupling, Method, Rk4Operator, StateMatrix, StepSize};
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DiagonalSpectrum};
use crate::oracle::ContinuousTrace;
use crate::scan::{OutputTrace, TokenSequence};

/// Shortest round-trip decimal form.
pub fn fmt_real(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixJson {
    Dense(Vec<Vec<f64>>),
    Diag(Vec<f64>),
}

impl MatrixJson {
    fn from_state(a: &StateMatrix) -> Self {
        match a {
            StateMatrix::Dense(m) => Self::Dense(m.to_rows()),
            StateMatrix::Diagonal(d) => Self::Diag(d.values().to_vec()),
        }
    }

    fn to_state(&self) -> Result<StateMatrix> {
        Ok(match self {
            Self::Dense(rows) => StateMatrix::Dense(dense(rows)?),
            Self::Diag(v) => StateMatrix::Diagonal(DiagonalSpectrum::new(v.clone())?),
        })
    }
}

fn dense(rows: &[Vec<f64>]) -> Result<DenseMatrix> {
    DenseMatrix::from_rows(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub n: usize,
    pub a: MatrixJson,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingJson {
    Sample,
    Trapezoid,
    Ramp { hold: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteFile {
    pub n: usize,
    pub method: String,
    pub delta: f64,
    pub a_bar: MatrixJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_bar: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_left: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_mid: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_right: Option<Vec<Vec<f64>>>,
    pub c: Vec<Vec<f64>>,
}

fn malformed(source_name: &str, detail: impl ToString) -> Error {
    Error::Malformed {
        source_name: source_name.to_string(),
        detail: detail.to_string(),
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, source_name: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| malformed(source_name, e))
}

fn check_n(n: usize, a: &StateMatrix, source_name: &str) -> Result<()> {
    if a.dim() != n {
        return Err(malformed(source_name, format!("field n = {n} but state matrix has dimension {}", a.dim())));
    }
    Ok(())
}

pub fn system_to_json(sys: &ContinuousSystem) -> String {
    let f = SystemFile {
        n: sys.n(),
        a: MatrixJson::from_state(sys.a()),
        b: sys.b().to_rows(),
        c: sys.c().to_rows(),
    };
    serde_json::to_string_pretty(&f).expect("plain data serializes") + "\n"
}

pub fn system_from_json(text: &str, source_name: &str) -> Result<ContinuousSystem> {
    let f: SystemFile = parse_json(text, source_name)?;
    let a = f.a.to_state().map_err(|e| malformed(source_name, format!("field a: {e}")))?;
    check_n(f.n, &a, source_name)?;
    let b = dense(&f.b).map_err(|e| malformed(source_name, format!("field b: {e}")))?;
    let c = dense(&f.c).map_err(|e| malformed(source_name, format!("field c: {e}")))?;
    ContinuousSystem::new(a, b, c).map_err(|e| malformed(source_name, e))
}

pub fn discretized_to_json(disc: &Discretized) -> String {
    let f = match disc {
        Discretized::Lti(d) => DiscreteFile {
            n: d.n(),
            method: d.method.to_string(),
            delta: d.delta.get(),
            a_bar: MatrixJson::from_state(&d.a_bar),
            b_bar: Some(d.b_bar.to_rows()),
            coupling: Some(match &d.coupling {
                InputCoupling::Sample => CouplingJson::Sample,
                InputCoupling::Trapezoid => CouplingJson::Trapezoid,
                InputCoupling::Ramp { hold } => CouplingJson::Ramp { hold: hold.to_rows() },
            }),
            b_left: None,
            b_mid: None,
            b_right: None,
            c: d.c.to_rows(),
        },
        Discretized::Rk4(op) => DiscreteFile {
            n: op.n(),
            method: Method::Rk4(op.mode).to_string(),
            delta: op.delta.get(),
            a_bar: MatrixJson::from_state(&op.a_bar),
            b_bar: None,
            coupling: None,
            b_left: Some(op.b_left.to_rows()),
            b_mid: Some(op.b_mid.to_rows()),
            b_right: Some(op.b_right.to_rows()),
            c: op.c.to_rows(),
        },
    };
    serde_json::to_string_pretty(&f).expect("plain data serializes") + "\n"
}

pub fn discretized_from_json(text: &str, source_name: &str) -> Result<Discretized> {
    let f: DiscreteFile = parse_json(text, source_name)?;
    let method: Method = f.method.parse().map_err(|e| malformed(source_name, format!("field method: {e}")))?;
    let delta = StepSize::new(f.delta).map_err(|e| malformed(source_name, format!("field delta: {e}")))?;
    let a_bar = f.a_bar.to_state().map_err(|e| malformed(source_name, format!("field a_bar: {e}")))?;
    check_n(f.n, &a_bar, source_name)?;
    let c = dense(&f.c).map_err(|e| malformed(source_name, format!("field c: {e}")))?;
    let field = |v: &Option<Vec<Vec<f64>>>, name: &str| -> Result<DenseMatrix> {
        let rows = v.as_ref().ok_or_else(|| malformed(source_name, format!("missing field {name}")))?;
        dense(rows).map_err(|e| malformed(source_name, format!("field {name}: {e}")))
    };
    match method {
        Method::Rk4(mode) => {
            let op = Rk4Operator {
                a_bar,
                b_left: field(&f.b_left, "b_left")?,
                b_mid: field(&f.b_mid, "b_mid")?,
                b_right: field(&f.b_right, "b_right")?,
                c,
                delta,
                mode,
            };
            let n = op.n();
            for (name, m) in [("b_left", &op.b_left), ("b_mid", &op.b_mid), ("b_right", &op.b_right)] {
                if m.rows() != n || m.cols() != op.b_left.cols() {
                    return Err(malformed(source_name, format!("field {name} has the wrong shape")));
                }
            }
            if op.c.cols() != n {
                return Err(malformed(source_name, "field c has the wrong shape"));
            }
            Ok(Discretized::Rk4(op))
        }
        method => {
            let coupling = match f.coupling.unwrap_or(CouplingJson::Sample) {
                CouplingJson::Sample => InputCoupling::Sample,
                CouplingJson::Trapezoid => InputCoupling::Trapezoid,
                CouplingJson::Ramp { hold } => InputCoupling::Ramp {
                    hold: dense(&hold).map_err(|e| malformed(source_name, format!("field coupling.ramp.hold: {e}")))?,
                },
            };
            let d = DiscreteSystem {
                a_bar,
                b_bar: field(&f.b_bar, "b_bar")?,
                c,
                delta,
                method,
                coupling,
            };
            d.validate().map_err(|e| malformed(source_name, e))?;
            Ok(Discretized::Lti(d))
        }
    }
}

fn rows_to_csv(channels: usize, rows: usize, label: impl Fn(usize) -> String, row: impl Fn(usize) -> Vec<f64>) -> String {
    let mut s = String::from("t");
    for c in 0..channels {
        let _ = write!(s, ",ch{c}");
    }
    s.push('\n');
    for t in 0..rows {
        s.push_str(&label(t));
        for v in row(t) {
            s.push(',');
            s.push_str(&fmt_real(v));
        }
        s.push('\n');
    }
    s
}

/// Tokens as CSV with the 1-based step index in the `t` column.
pub fn tokens_to_csv(x: &TokenSequence) -> String {
    rows_to_csv(x.channels(), x.len(), |t| (t + 1).to_string(), |t| x.row(t).to_vec())
}

pub fn outputs_to_csv(y: &OutputTrace) -> String {
    rows_to_csv(y.channels, y.len(), |t| (t + 1).to_string(), |t| y.row(t).to_vec())
}

/// Oracle outputs with the time in the `t` column.
pub fn continuous_to_csv(trace: &ContinuousTrace) -> String {
    rows_to_csv(trace.p, trace.len(), |i| fmt_real(trace.times[i]), |i| trace.output(i).to_vec())
}

/// Reads `t,ch0,...` CSV; the `t` column is ignored.
pub fn tokens_from_csv(text: &str, source_name: &str) -> Result<TokenSequence> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| malformed(source_name, "empty file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"t") || cols.len() < 2 {
        return Err(malformed(source_name, "line 1: header must be t,ch0,..."));
    }
    for (i, c) in cols[1..].iter().enumerate() {
        if *c != format!("ch{i}") {
            return Err(malformed(source_name, format!("line 1: column {} is '{c}', expected ch{i}", i + 2)));
        }
    }
    let channels = cols.len() - 1;
    let mut data = Vec::new();
    let mut len = 0;
    for (ln, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != channels + 1 {
            return Err(malformed(
                source_name,
                format!("line {}: {} fields, expected {}", ln + 1, fields.len(), channels + 1),
            ));
        }
        for (i, f) in fields[1..].iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| {
                malformed(source_name, format!("line {}: field ch{i} '{f}' is not a number", ln + 1))
            })?;
            if !v.is_finite() {
                return Err(malformed(source_name, format!("line {}: field ch{i} is not finite", ln + 1)));
            }
            data.push(v);
        }
        len += 1;
    }
    if len == 0 {
        return Err(malformed(source_name, "no data rows"));
    }
    TokenSequence::new(len, channels, data)
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.display().to_string(),
            detail: e.to_string(),
        })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

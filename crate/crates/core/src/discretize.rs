//! Continuous-to-discrete conversion of `h' = A h + B x, y = C h`.
//!
//! Every hold-type input matrix is assembled from φ-functions of `AΔ`, so
//! singular and nilpotent `A` need no special casing.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{
    factorial, mat_exp, phi_all, scalar_phis, DenseMatrix, DiagonalSpectrum, LuFactors, PhiOrder,
};

pub const MAX_HOH_ORDER: usize = 7;
pub const MAX_POLY_DEGREE: usize = 5;

/// State matrix of a system, dense or diagonal.
#[derive(Debug, Clone, PartialEq)]
pub enum StateMatrix {
    Dense(DenseMatrix),
    Diagonal(DiagonalSpectrum),
}

impl StateMatrix {
    pub fn dim(&self) -> usize {
        match self {
            StateMatrix::Dense(m) => m.rows(),
            StateMatrix::Diagonal(d) => d.len(),
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            StateMatrix::Dense(m) => m.clone(),
            StateMatrix::Diagonal(d) => d.to_dense(),
        }
    }

    /// `out = self * v`.
    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        match self {
            StateMatrix::Dense(m) => m.mul_vec_into(v, out),
            StateMatrix::Diagonal(d) => {
                for ((o, a), x) in out.iter_mut().zip(d.values()).zip(v) {
                    *o = a * x;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSystem {
    a: StateMatrix,
    b: DenseMatrix,
    c: DenseMatrix,
}

impl ContinuousSystem {
    pub fn new(a: StateMatrix, b: DenseMatrix, c: DenseMatrix) -> Result<Self> {
        if let StateMatrix::Dense(m) = &a {
            if !m.is_square() {
                return Err(Error::NotSquare {
                    rows: m.rows(),
                    cols: m.cols(),
                });
            }
        }
        let n = a.dim();
        if b.rows() != n {
            return Err(Error::Shape(format!("B has {} rows, state dimension is {n}", b.rows())));
        }
        if c.cols() != n {
            return Err(Error::Shape(format!("C has {} columns, state dimension is {n}", c.cols())));
        }
        Ok(Self { a, b, c })
    }

    /// Single-input single-output scalar system `h' = a h + b x, y = c h`.
    pub fn scalar(a: f64, b: f64, c: f64) -> Result<Self> {
        Self::new(
            StateMatrix::Dense(DenseMatrix::new(1, 1, vec![a])?),
            DenseMatrix::new(1, 1, vec![b])?,
            DenseMatrix::new(1, 1, vec![c])?,
        )
    }

    pub fn a(&self) -> &StateMatrix {
        &self.a
    }

    pub fn b(&self) -> &DenseMatrix {
        &self.b
    }

    pub fn c(&self) -> &DenseMatrix {
        &self.c
    }

    pub fn n(&self) -> usize {
        self.a.dim()
    }

    pub fn inputs(&self) -> usize {
        self.b.cols()
    }

    pub fn outputs(&self) -> usize {
        self.c.rows()
    }
}

/// Strictly positive, finite step.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct StepSize(f64);

impl StepSize {
    pub fn new(delta: f64) -> Result<Self> {
        if delta.is_finite() && delta > 0.0 {
            Ok(Self(delta))
        } else {
            Err(Error::InvalidArgument(format!("step size must be positive and finite, got {delta}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolyBasis {
    /// `B̄ = A⁻¹(e^{AΔ} − I)B + ½ A⁻²(e^{AΔ} − I − AΔ)B`, in φ form.
    CubicClosedForm,
    /// Coefficients `c_0, c_1, …` of `p(τ) = Σ c_j τ^j`.
    Custom(Vec<f64>),
}

/// How RK4 obtains its midpoint and right-hand input taps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rk4InputMode {
    LinearInterp,
    Hold,
    ExactSignal,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Zoh,
    Foh,
    Bilinear,
    Polynomial(PolyBasis),
    HigherOrderHold(usize),
    Rk4(Rk4InputMode),
}

impl Method {
    /// The six schemes with their default parameters.
    pub fn all_default() -> Vec<Method> {
        vec![
            Method::Zoh,
            Method::Foh,
            Method::Bilinear,
            Method::Polynomial(PolyBasis::CubicClosedForm),
            Method::HigherOrderHold(2),
            Method::Rk4(Rk4InputMode::LinearInterp),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Method::HigherOrderHold(n) if *n > MAX_HOH_ORDER => Err(Error::InvalidArgument(
                format!("hold order {n} exceeds {MAX_HOH_ORDER}"),
            )),
            Method::Polynomial(PolyBasis::Custom(c)) => {
                if c.is_empty() || c.len() > MAX_POLY_DEGREE + 1 {
                    Err(Error::InvalidArgument(format!(
                        "polynomial basis needs 1..={} coefficients, got {}",
                        MAX_POLY_DEGREE + 1,
                        c.len()
                    )))
                } else if c.iter().any(|v| !v.is_finite()) {
                    Err(Error::NonFinite("polynomial coefficients".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Short kind tag: `zoh`, `foh`, `bil`, `pol`, `hoh` or `rk4`.
    pub fn kind(&self) -> &'static str {
        match self {
            Method::Zoh => "zoh",
            Method::Foh => "foh",
            Method::Bilinear => "bil",
            Method::Polynomial(_) => "pol",
            Method::HigherOrderHold(_) => "hoh",
            Method::Rk4(_) => "rk4",
        }
    }

    /// How the scheme couples samples of the input into the update.
    fn coupling_kind(&self) -> CouplingKind {
        match self {
            Method::Foh => CouplingKind::Ramp,
            Method::Bilinear => CouplingKind::Trapezoid,
            _ => CouplingKind::Sample,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Polynomial(PolyBasis::CubicClosedForm) => write!(f, "pol"),
            Method::Polynomial(PolyBasis::Custom(c)) => {
                let parts: Vec<String> = c.iter().map(|v| v.to_string()).collect();
                write!(f, "pol:{}", parts.join("/"))
            }
            Method::HigherOrderHold(n) => write!(f, "hoh:{n}"),
            Method::Rk4(Rk4InputMode::LinearInterp) => write!(f, "rk4"),
            Method::Rk4(Rk4InputMode::Hold) => write!(f, "rk4:hold"),
            Method::Rk4(Rk4InputMode::ExactSignal) => write!(f, "rk4:exact"),
            m => write!(f, "{}", m.kind()),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Accepts `zoh`, `foh`, `bil`, `pol`, `pol:c0/c1/…`, `hoh`, `hoh:N`,
    /// `rk4`, `rk4:hold`, `rk4:linear`, `rk4:exact`. Bare `hoh` is order 2.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (kind, arg) = match lower.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (lower.as_str(), None),
        };
        let bad = || Error::InvalidArgument(format!("unknown method `{s}`"));
        let m = match (kind, arg) {
            ("zoh", None) => Method::Zoh,
            ("foh", None) => Method::Foh,
            ("bil" | "bilinear" | "tustin", None) => Method::Bilinear,
            ("pol", None | Some("cubic")) => Method::Polynomial(PolyBasis::CubicClosedForm),
            ("pol", Some(coeffs)) => Method::Polynomial(PolyBasis::Custom(
                coeffs
                    .split('/')
                    .map(|c| c.trim().parse::<f64>().map_err(|_| bad()))
                    .collect::<Result<_>>()?,
            )),
            ("hoh", None) => Method::HigherOrderHold(2),
            ("hoh", Some(n)) => Method::HigherOrderHold(n.parse().map_err(|_| bad())?),
            ("rk4", None | Some("linear")) => Method::Rk4(Rk4InputMode::LinearInterp),
            ("rk4", Some("hold")) => Method::Rk4(Rk4InputMode::Hold),
            ("rk4", Some("exact")) => Method::Rk4(Rk4InputMode::ExactSignal),
            _ => return Err(bad()),
        };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CouplingKind {
    Sample,
    Trapezoid,
    Ramp,
}

/// How a step consumes its left sample `x_t` and right sample `x_{t+1}`.
///
/// * `Sample`: `B̄ x_t`.
/// * `Trapezoid`: `B̄ (x_t + x_{t+1}) / 2`.
/// * `Ramp`: `hold·x_t + B̄ (x_{t+1} − x_t)/Δ`, i.e. `B̄` is the response to
///   a unit-slope input over the step and `hold` the response to a held one.
#[derive(Debug, Clone, PartialEq)]
pub enum InputCoupling {
    Sample,
    Trapezoid,
    Ramp { hold: DenseMatrix },
}

/// Input matrices applied to the left and right samples of a step.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTaps {
    pub left: DenseMatrix,
    pub right: Option<DenseMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSystem {
    pub a_bar: StateMatrix,
    pub b_bar: DenseMatrix,
    pub c: DenseMatrix,
    pub delta: StepSize,
    pub method: Method,
    pub coupling: InputCoupling,
}

impl DiscreteSystem {
    /// Discrete system with sample coupling (`h_t = Ā h_{t−1} + B̄ x_t`).
    pub fn from_matrices(
        a_bar: StateMatrix,
        b_bar: DenseMatrix,
        c: DenseMatrix,
        delta: StepSize,
    ) -> Result<Self> {
        let sys = Self {
            a_bar,
            b_bar,
            c,
            delta,
            method: Method::Zoh,
            coupling: InputCoupling::Sample,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        if let StateMatrix::Dense(m) = &self.a_bar {
            if !m.is_square() {
                return Err(Error::NotSquare {
                    rows: m.rows(),
                    cols: m.cols(),
                });
            }
            if !m.is_finite() {
                return Err(Error::NonFinite("a_bar".into()));
            }
        }
        let n = self.a_bar.dim();
        if self.b_bar.rows() != n || self.c.cols() != n {
            return Err(Error::Shape(format!(
                "a_bar is {n}x{n}, b_bar {}x{}, c {}x{}",
                self.b_bar.rows(),
                self.b_bar.cols(),
                self.c.rows(),
                self.c.cols()
            )));
        }
        if !self.b_bar.is_finite() {
            return Err(Error::NonFinite("b_bar".into()));
        }
        if let InputCoupling::Ramp { hold } = &self.coupling {
            if hold.rows() != n || hold.cols() != self.b_bar.cols() {
                return Err(Error::Shape("ramp hold matrix does not match b_bar".into()));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.a_bar.dim()
    }

    pub fn inputs(&self) -> usize {
        self.b_bar.cols()
    }

    pub fn outputs(&self) -> usize {
        self.c.rows()
    }

    /// Same matrices, driven by `B̄ x_t` only.
    pub fn with_sample_coupling(mut self) -> Self {
        self.coupling = InputCoupling::Sample;
        self
    }

    pub fn input_taps(&self) -> InputTaps {
        match &self.coupling {
            InputCoupling::Sample => InputTaps {
                left: self.b_bar.clone(),
                right: None,
            },
            InputCoupling::Trapezoid => {
                let half = self.b_bar.scale(0.5);
                InputTaps {
                    left: half.clone(),
                    right: Some(half),
                }
            }
            InputCoupling::Ramp { hold } => {
                let slope = self.b_bar.scale(1.0 / self.delta.get());
                InputTaps {
                    left: hold - &slope,
                    right: Some(slope),
                }
            }
        }
    }
}

/// RK4 step as an affine map with three input taps:
/// `h_{t+1} = Ā h_t + B_L x_t + B_M x_{t+Δ/2} + B_R x_{t+Δ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rk4Operator {
    pub a_bar: StateMatrix,
    pub b_left: DenseMatrix,
    pub b_mid: DenseMatrix,
    pub b_right: DenseMatrix,
    pub c: DenseMatrix,
    pub delta: StepSize,
    pub mode: Rk4InputMode,
}

impl Rk4Operator {
    pub fn n(&self) -> usize {
        self.a_bar.dim()
    }

    pub fn inputs(&self) -> usize {
        self.b_left.cols()
    }

    pub fn outputs(&self) -> usize {
        self.c.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Discretized {
    Lti(DiscreteSystem),
    Rk4(Rk4Operator),
}

impl Discretized {
    pub fn method(&self) -> Method {
        match self {
            Discretized::Lti(d) => d.method.clone(),
            Discretized::Rk4(op) => Method::Rk4(op.mode),
        }
    }
}

pub fn discretize(sys: &ContinuousSystem, d: StepSize, m: &Method) -> Result<Discretized> {
    m.validate()?;
    Ok(match m {
        Method::Zoh => Discretized::Lti(zoh_matrices(sys, d)?),
        Method::Foh => Discretized::Lti(foh_matrices(sys, d)?),
        Method::Bilinear => Discretized::Lti(bil_matrices(sys, d)?),
        Method::Polynomial(basis) => Discretized::Lti(pol_matrices(sys, d, basis)?),
        Method::HigherOrderHold(n) => Discretized::Lti(hoh_matrices(sys, d, *n)?),
        Method::Rk4(mode) => {
            let mut op = rk4_matrices(sys, d)?;
            op.mode = *mode;
            Discretized::Rk4(op)
        }
    })
}

/// Visits the weights of `Σ w_j φ_j(AΔ)`, the combination multiplying B in
/// the hold family.
#[inline]
fn for_each_hold_weight(m: &Method, delta: f64, mut f: impl FnMut(usize, f64)) {
    match m {
        Method::Zoh => f(1, delta),
        Method::Foh => f(2, delta * delta),
        Method::Polynomial(PolyBasis::CubicClosedForm) => {
            f(1, delta);
            f(2, 0.5 * delta * delta);
        }
        Method::HigherOrderHold(n) => {
            let mut w = delta;
            for i in 0..=*n {
                f(i + 1, w);
                w *= delta / (i + 1) as f64;
            }
        }
        _ => unreachable!("not a weighted hold scheme: {m}"),
    }
}

/// Highest φ order used by a hold scheme.
fn hold_top(m: &Method) -> usize {
    match m {
        Method::Zoh => 1,
        Method::HigherOrderHold(n) => n + 1,
        _ => 2,
    }
}

fn hold_weights(m: &Method, delta: f64) -> Vec<(usize, f64)> {
    let mut w = Vec::new();
    for_each_hold_weight(m, delta, |j, v| w.push((j, v)));
    w
}

fn hold_family(sys: &ContinuousSystem, d: StepSize, m: Method) -> Result<DiscreteSystem> {
    let delta = d.get();
    let weights = hold_weights(&m, delta);
    let top = weights.iter().map(|w| w.0).max().unwrap_or(1);
    let (a_bar, b_bar, hold) = match sys.a() {
        StateMatrix::Dense(a) => {
            let phis = phi_all(PhiOrder::new(top)?, &a.scale(delta))?;
            let mut g = DenseMatrix::zeros(sys.n(), sys.n());
            for &(j, w) in &weights {
                g = &g + &phis[j].scale(w);
            }
            let hold = (m == Method::Foh).then(|| &phis[1].scale(delta) * sys.b());
            (StateMatrix::Dense(phis[0].clone()), &g * sys.b(), hold)
        }
        StateMatrix::Diagonal(spec) => {
            let mut a_bar = Vec::with_capacity(spec.len());
            let mut gain = Vec::with_capacity(spec.len());
            let mut hold_gain = Vec::with_capacity(spec.len());
            for &a in spec.values() {
                let p = scalar_phis(top, a * delta);
                a_bar.push(p[0]);
                gain.push(weights.iter().map(|&(j, w)| w * p[j]).sum::<f64>());
                hold_gain.push(delta * p[1]);
            }
            let hold = (m == Method::Foh).then(|| row_scaled(&hold_gain, sys.b()));
            (
                StateMatrix::Diagonal(DiagonalSpectrum::new(a_bar)?),
                row_scaled(&gain, sys.b()),
                hold,
            )
        }
    };
    let coupling = match hold {
        Some(hold) => InputCoupling::Ramp { hold },
        None => InputCoupling::Sample,
    };
    finish(a_bar, b_bar, sys, d, m, coupling)
}

fn finish(
    a_bar: StateMatrix,
    b_bar: DenseMatrix,
    sys: &ContinuousSystem,
    d: StepSize,
    method: Method,
    coupling: InputCoupling,
) -> Result<DiscreteSystem> {
    debug_assert_eq!(
        method.coupling_kind(),
        match coupling {
            InputCoupling::Sample => CouplingKind::Sample,
            InputCoupling::Trapezoid => CouplingKind::Trapezoid,
            InputCoupling::Ramp { .. } => CouplingKind::Ramp,
        }
    );
    let out = DiscreteSystem {
        a_bar,
        b_bar,
        c: sys.c().clone(),
        delta: d,
        method,
        coupling,
    };
    out.validate()?;
    Ok(out)
}

/// `diag(g) * B`.
fn row_scaled(g: &[f64], b: &DenseMatrix) -> DenseMatrix {
    let mut out = b.clone();
    for (i, gi) in g.iter().enumerate() {
        for j in 0..b.cols() {
            out[(i, j)] *= gi;
        }
    }
    out
}

/// `Ā = e^{AΔ}`, `B̄ = Δ φ₁(AΔ) B`.
pub fn zoh_matrices(sys: &ContinuousSystem, d: StepSize) -> Result<DiscreteSystem> {
    hold_family(sys, d, Method::Zoh)
}

/// `Ā = e^{AΔ}`, `B̄ = Δ² φ₂(AΔ) B = A⁻²(e^{AΔ} − I − AΔ) B`.
///
/// `B̄` is the response to an input ramp of unit slope over the step; the
/// held part `Δ φ₁(AΔ) B` travels in the ramp coupling.
pub fn foh_matrices(sys: &ContinuousSystem, d: StepSize) -> Result<DiscreteSystem> {
    hold_family(sys, d, Method::Foh)
}

/// `Ā = (I − Δ/2 A)⁻¹ (I + Δ/2 A)`, `B̄ = (I − Δ/2 A)⁻¹ Δ B`, one factorization.
pub fn bil_matrices(sys: &ContinuousSystem, d: StepSize) -> Result<DiscreteSystem> {
    let delta = d.get();
    let (a_bar, b_bar) = match sys.a() {
        StateMatrix::Dense(a) => {
            let n = sys.n();
            let half = a.scale(0.5 * delta);
            let id = DenseMatrix::identity(n);
            let lu = LuFactors::new(&(&id - &half))?;
            (
                StateMatrix::Dense(lu.solve(&(&id + &half))?),
                lu.solve(&sys.b().scale(delta))?,
            )
        }
        StateMatrix::Diagonal(spec) => {
            let mut a_bar = Vec::with_capacity(spec.len());
            let mut gain = Vec::with_capacity(spec.len());
            for (i, &a) in spec.values().iter().enumerate() {
                let (ab, g) = bilinear_scalar(a, delta).ok_or(Error::Singular {
                    column: i,
                    pivot: 0.0,
                })?;
                a_bar.push(ab);
                gain.push(g);
            }
            (
                StateMatrix::Diagonal(DiagonalSpectrum::new(a_bar)?),
                row_scaled(&gain, sys.b()),
            )
        }
    };
    finish(a_bar, b_bar, sys, d, Method::Bilinear, InputCoupling::Trapezoid)
}

fn bilinear_scalar(a: f64, delta: f64) -> Option<(f64, f64)> {
    let h = 0.5 * a * delta;
    let den = 1.0 - h;
    if den.abs() <= 1e-13 * (1.0f64).max(h.abs()) {
        return None;
    }
    Some(((1.0 + h) / den, delta / den))
}

/// `Ā = e^{AΔ}`; `B̄` from the cubic closed form or `∫₀^Δ e^{Aτ} B p(τ) dτ`.
///
/// The integral is evaluated exactly: `∫₀^Δ e^{Aτ} τ^j dτ = e^{AΔ} j! Δ^{j+1} φ_{j+1}(−AΔ)`.
pub fn pol_matrices(sys: &ContinuousSystem, d: StepSize, basis: &PolyBasis) -> Result<DiscreteSystem> {
    let m = Method::Polynomial(basis.clone());
    m.validate()?;
    let coeffs = match basis {
        PolyBasis::CubicClosedForm => return hold_family(sys, d, m),
        PolyBasis::Custom(c) => c,
    };
    let delta = d.get();
    let (a_bar, b_bar) = match sys.a() {
        StateMatrix::Dense(a) => {
            let e = mat_exp(&a.scale(delta))?;
            let back = phi_all(PhiOrder::new(coeffs.len())?, &a.scale(-delta))?;
            let mut g = DenseMatrix::zeros(sys.n(), sys.n());
            for (j, &c) in coeffs.iter().enumerate() {
                let w = c * factorial(j) * delta.powi(j as i32 + 1);
                g = &g + &back[j + 1].scale(w);
            }
            let b_bar = &(&e * &g) * sys.b();
            (StateMatrix::Dense(e), b_bar)
        }
        StateMatrix::Diagonal(spec) => {
            let mut a_bar = Vec::with_capacity(spec.len());
            let mut gain = Vec::with_capacity(spec.len());
            for &a in spec.values() {
                a_bar.push((a * delta).exp());
                gain.push(poly_integral(coeffs, a, delta));
            }
            (
                StateMatrix::Diagonal(DiagonalSpectrum::new(a_bar)?),
                row_scaled(&gain, sys.b()),
            )
        }
    };
    if !b_bar.is_finite() {
        return Err(Error::NonFinite("polynomial-basis input matrix".into()));
    }
    finish(a_bar, b_bar, sys, d, m, InputCoupling::Sample)
}

/// `∫₀^Δ e^{aτ} p(τ) dτ` for scalar `a`.
fn poly_integral(coeffs: &[f64], a: f64, delta: f64) -> f64 {
    let z = a * delta;
    if z >= -30.0 {
        let back = scalar_phis(coeffs.len(), -z);
        let e = z.exp();
        coeffs
            .iter()
            .enumerate()
            .map(|(j, c)| c * factorial(j) * delta.powi(j as i32 + 1) * back[j + 1])
            .sum::<f64>()
            * e
    } else {
        // ∫₀^Δ e^{aτ} τ^j dτ = j!/(−a)^{j+1} (1 − e^{aΔ} Σ_{m≤j} (−aΔ)^m/m!)
        let x = -z;
        let e = z.exp();
        let mut partial = 0.0;
        let mut term = 1.0;
        coeffs
            .iter()
            .enumerate()
            .map(|(j, c)| {
                if j > 0 {
                    term *= x / j as f64;
                }
                partial += term;
                c * factorial(j) / (-a).powi(j as i32 + 1) * (1.0 - e * partial)
            })
            .sum()
    }
}

/// `Ā = e^{AΔ}`, `B̄ = Σ_{i=0}^{n} (Δ^{i+1}/i!) φ_{i+1}(AΔ) B`.
pub fn hoh_matrices(sys: &ContinuousSystem, d: StepSize, n: usize) -> Result<DiscreteSystem> {
    let m = Method::HigherOrderHold(n);
    m.validate()?;
    hold_family(sys, d, m)
}

/// Classical RK4 with the four stages eliminated. With `Z = ΔA`:
///
/// ```text
/// Ā   = I + Z + Z²/2 + Z³/6 + Z⁴/24
/// B_L = Δ/6 (I + Z + Z²/2 + Z³/4) B
/// B_M = Δ/6 (4I + 2Z + Z²/2) B
/// B_R = Δ/6 B
/// ```
pub fn rk4_matrices(sys: &ContinuousSystem, d: StepSize) -> Result<Rk4Operator> {
    let delta = d.get();
    let sixth = delta / 6.0;
    let (a_bar, b_left, b_mid) = match sys.a() {
        StateMatrix::Dense(a) => {
            let n = sys.n();
            let id = DenseMatrix::identity(n);
            let z = a.scale(delta);
            let z2 = &z * &z;
            let z3 = &z2 * &z;
            let z4 = &z3 * &z;
            let a_bar = &(&(&(&id + &z) + &z2.scale(0.5)) + &z3.scale(1.0 / 6.0)) + &z4.scale(1.0 / 24.0);
            let left = &(&(&id + &z) + &z2.scale(0.5)) + &z3.scale(0.25);
            let mid = &(&id.scale(4.0) + &z.scale(2.0)) + &z2.scale(0.5);
            (
                StateMatrix::Dense(a_bar),
                (&left * sys.b()).scale(sixth),
                (&mid * sys.b()).scale(sixth),
            )
        }
        StateMatrix::Diagonal(spec) => {
            let taps: Vec<Rk4Scalar> = spec.values().iter().map(|&a| rk4_scalar(a, delta)).collect();
            (
                StateMatrix::Diagonal(DiagonalSpectrum::new(taps.iter().map(|t| t.a_bar).collect())?),
                row_scaled(&taps.iter().map(|t| t.left).collect::<Vec<_>>(), sys.b()),
                row_scaled(&taps.iter().map(|t| t.mid).collect::<Vec<_>>(), sys.b()),
            )
        }
    };
    let op = Rk4Operator {
        a_bar,
        b_left,
        b_mid,
        b_right: sys.b().scale(sixth),
        c: sys.c().clone(),
        delta: d,
        mode: Rk4InputMode::LinearInterp,
    };
    if !(op.b_left.is_finite() && op.b_mid.is_finite()) {
        return Err(Error::NonFinite("rk4 taps".into()));
    }
    Ok(op)
}

/// Scalar RK4 coefficients for one eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rk4Scalar {
    pub a_bar: f64,
    pub left: f64,
    pub mid: f64,
    pub right: f64,
}

pub fn rk4_scalar(a: f64, delta: f64) -> Rk4Scalar {
    let z = a * delta;
    let s = delta / 6.0;
    Rk4Scalar {
        a_bar: 1.0 + z * (1.0 + z * (0.5 + z * (1.0 / 6.0 + z / 24.0))),
        left: s * (1.0 + z * (1.0 + z * (0.5 + z * 0.25))),
        mid: s * (4.0 + z * (2.0 + z * 0.5)),
        right: s,
    }
}

/// Scalar `(ā, b̄)` per unit input weight for one eigenvalue `a` and step `delta`.
///
/// For RK4 the input gain is the sum of the three taps, i.e. the response to
/// an input held over the step.
pub fn scalar_coefficients(m: &Method, a: f64, delta: f64) -> Result<(f64, f64)> {
    match m {
        Method::Bilinear => bilinear_scalar(a, delta).ok_or(Error::Singular {
            column: 0,
            pivot: 0.0,
        }),
        Method::Polynomial(PolyBasis::Custom(c)) => Ok(((a * delta).exp(), poly_integral(c, a, delta))),
        Method::Rk4(_) => {
            let t = rk4_scalar(a, delta);
            Ok((t.a_bar, t.left + t.mid + t.right))
        }
        _ => {
            let p = scalar_phis(hold_top(m), a * delta);
            let mut g = 0.0;
            for_each_hold_weight(m, delta, |j, w| g += w * p[j]);
            Ok((p[0], g))
        }
    }
}

/// `(ā, b̄, ∂ā/∂Δ, ∂b̄/∂Δ)` for the differentiable schemes.
///
/// Uses `d/dΔ [Δ^{k} φ_k(aΔ)] = Δ^{k−1} φ_{k−1}(aΔ)`.
pub fn scalar_coefficients_with_derivative(m: &Method, a: f64, delta: f64) -> Result<[f64; 4]> {
    match m {
        Method::Bilinear => {
            let (ab, g) = bilinear_scalar(a, delta).ok_or(Error::Singular {
                column: 0,
                pivot: 0.0,
            })?;
            let den = 1.0 - 0.5 * a * delta;
            let den2 = den * den;
            Ok([ab, g, a / den2, 1.0 / den2])
        }
        Method::Polynomial(PolyBasis::Custom(c)) => {
            let e = (a * delta).exp();
            let p_end: f64 = c.iter().rev().fold(0.0, |acc, cj| acc * delta + cj);
            Ok([e, poly_integral(c, a, delta), a * e, e * p_end])
        }
        Method::Rk4(_) => Err(Error::Unsupported(
            "step-size derivatives of the RK4 operator".into(),
        )),
        _ => {
            let p = scalar_phis(hold_top(m), a * delta);
            let (mut g, mut dg) = (0.0, 0.0);
            // w_j = c_j Δ^j so d/dΔ (w_j φ_j) = (w_j/Δ) φ_{j−1}
            for_each_hold_weight(m, delta, |j, w| {
                g += w * p[j];
                dg += w / delta * p[j - 1];
            });
            Ok([p[0], g, a * p[0], dg])
        }
    }
}

/// Diagonal discretization result: `ā` per state and `b̄` per state.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagDiscretization {
    pub a_bar: DiagonalSpectrum,
    pub b_bar: Vec<f64>,
}

/// Elementwise discretization of a diagonal spectrum.
///
/// `deltas` holds one step for every state or a single shared step;
/// `b_scale` holds the input weight of every state.
pub fn discretize_diag(
    a: &DiagonalSpectrum,
    deltas: &[f64],
    m: &Method,
    b_scale: &[f64],
) -> Result<DiagDiscretization> {
    m.validate()?;
    let n = a.len();
    if deltas.len() != n && deltas.len() != 1 {
        return Err(Error::Shape(format!("{} step sizes for {n} states", deltas.len())));
    }
    if b_scale.len() != n {
        return Err(Error::Shape(format!("{} input weights for {n} states", b_scale.len())));
    }
    let mut a_bar = Vec::with_capacity(n);
    let mut b_bar = Vec::with_capacity(n);
    for (i, (&ai, &bi)) in a.values().iter().zip(b_scale).enumerate() {
        let delta = deltas[if deltas.len() == 1 { 0 } else { i }];
        StepSize::new(delta)?;
        let (ab, g) = scalar_coefficients(m, ai, delta).map_err(|e| match e {
            Error::Singular { .. } => Error::BilinearPole { step: 0, channel: i },
            e => e,
        })?;
        a_bar.push(ab);
        b_bar.push(g * bi);
    }
    Ok(DiagDiscretization {
        a_bar: DiagonalSpectrum::new(a_bar)?,
        b_bar,
    })
}

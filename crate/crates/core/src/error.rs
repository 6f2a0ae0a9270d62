use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("matrix is singular to working precision (pivot {pivot:e} in column {column})")]
    Singular { column: usize, pivot: f64 },
    #[error("eigenvalue iteration did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("state became non-finite at step {step}")]
    Overflow { step: usize },
    #[error("bilinear resolvent pole at step {step}, channel {channel}")]
    BilinearPole { step: usize, channel: usize },
    #[error("integrator step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("signal evaluated at t = {t}, outside its domain [0, {end}]")]
    OutsideDomain { t: f64, end: f64 },
    #[error("every error sample is below the noise floor {floor:e}")]
    NoiseFloor { floor: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("malformed {source_name}: {detail}")]
    Malformed { source_name: String, detail: String },
    #[error("i/o error on {path}: {detail}")]
    Io { path: String, detail: String },
}

impl Error {
    /// True for failures of the numerics (singularity, overflow,
    /// non-convergence) as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::NoConvergence { .. }
                | Error::Overflow { .. }
                | Error::BilinearPole { .. }
                | Error::StepUnderflow { .. }
                | Error::NoiseFloor { .. }
                | Error::NonFinite(_)
        )
    }
}

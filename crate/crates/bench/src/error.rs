use thiserror::Error;

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] ssmdisc_core::Error),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("gradient check failed for {method}: relative error {error:e}")]
    GradientCheck { method: String, error: f64 },
    #[error("seed {seed}, method {method}: {source}")]
    Run {
        seed: u64,
        method: String,
        #[source]
        source: Box<BenchError>,
    },
    #[error("dataset cache {path}: {detail}")]
    Cache { path: String, detail: String },
}

impl BenchError {
    /// Numerical failure as opposed to bad configuration.
    pub fn is_numerical(&self) -> bool {
        match self {
            BenchError::Core(e) => e.is_numerical(),
            BenchError::Diverged { .. } | BenchError::GradientCheck { .. } => true,
            BenchError::Run { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

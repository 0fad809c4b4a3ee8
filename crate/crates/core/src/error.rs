use thiserror::Error;

/// Crate-wide error type. Variants are grouped by the subsystem that raises
/// them; all carry enough context to reconstruct the failing call.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("epsilon {0} out of range (expected 0 < eps <= 1/4)")]
    EpsilonOutOfRange(f64),

    #[error("tau {0} out of range (expected 0 < tau < 1/4)")]
    TauOutOfRange(f64),

    #[error("not a valid density: {0}")]
    InvalidDensity(String),

    #[error("measure is not bistochastic: {0}")]
    NotBistochastic(String),

    #[error("marginal mismatch: {0}")]
    MarginalMismatch(String),

    #[error("single-frame path: time derivative undefined")]
    SingleFrame,

    #[error("linear program infeasible (phase-1 residual {0:.3e})")]
    Infeasible(f64),

    #[error("linear program unbounded")]
    Unbounded,

    #[error("enumeration budget exceeded: instance needs {needed} paths, budget {budget}")]
    BudgetExceeded { needed: u128, budget: u64 },

    #[error("solver did not converge after {iters} iterations (residual {residual:.3e})")]
    NonConvergence { iters: usize, residual: f64 },

    #[error("regularization parameter must be positive, got {0}")]
    NonPositiveReg(f64),

    #[error("density lower bound violated: min {min:.6} < required {required}")]
    DensityBound { min: f64, required: f64 },

    #[error("ode step failure: per-substep displacement {disp:.4} exceeds 1/4; increase ode_steps")]
    OdeStepTooCoarse { disp: f64 },

    #[error("surgery stage {stage} failed: {source}")]
    SurgeryStage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {dim}: Fock truncation needs at least 2 levels")]
    InvalidDimension { dim: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("vector of length {len} is not a vectorized square matrix")]
    NotSquare { len: usize },

    #[error("Fock truncation too small: |alpha|^2 = {occupation:.3} needs dim >= {required}")]
    TruncationTooSmall { occupation: f64, required: usize },

    #[error("truncation inadequate after retries: top-level population {population:.3e} at dim {dim}")]
    TruncationInadequate { dim: usize, population: f64 },

    #[error("negative dissipation rate {rate}")]
    NegativeRate { rate: f64 },

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("density matrix invariant violated: {0}")]
    InvalidState(String),

    #[error("steady state is degenerate or ill-conditioned (smallest singular values: {singular_values:?})")]
    DegenerateSteadyState { singular_values: Option<[f64; 2]> },

    #[error("linear solve failed ({context}): residual {residual:.3e}")]
    Solver { context: &'static str, residual: f64 },

    #[error("superoperator dimension {dim2} exceeds dense limit {limit}; use the sparse resolvent or Drazin paths")]
    TooLarge { dim2: usize, limit: usize },

    #[error("omega must be nonzero for the resolvent; use the Drazin inverse at omega = 0")]
    ZeroFrequency,

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("time propagation failed: {0}")]
    Propagation(String),

    #[error("negative diffusion coefficient {value:.3e}")]
    NegativeDiffusion { value: f64 },

    #[error("filter time constant {tau_f} must exceed the sample step {dt}")]
    InvalidFilter { tau_f: f64, dt: f64 },

    #[error("invalid trajectory configuration: {0}")]
    InvalidConfig(String),

    #[error("conditional state lost positivity at t = {time:.4} (min eigenvalue {min_eigenvalue:.3e}); reduce dt")]
    StepSize { time: f64, min_eigenvalue: f64 },

    #[error("diffusion estimate needs at least {required} records, got {found}")]
    TooFewRecords { required: usize, found: usize },

    #[error("Wigner grid too small: edge probability mass {edge_mass:.3e}")]
    GridTooSmall { edge_mass: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

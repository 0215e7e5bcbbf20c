use thiserror::Error;

/// Errors raised by the solvers in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid needs at least 2 intervals, got {0}")]
    InvalidGrid(usize),

    #[error("invalid interval [{a}, {b}]: endpoints must satisfy 0 <= a <= b <= 1")]
    InvalidInterval { a: f64, b: f64 },

    #[error("function has {got} values but the grid has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },

    #[error("diagonal degeneracy at x = {x}: implicit factor {factor} is not positive, refine the grid")]
    DiagonalDegeneracy { x: f64, factor: f64 },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("x-derivative of the kernel density is unavailable")]
    DerivativeUnavailable,

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("iteration cap of {cap} exceeded (last update {last_update:e})")]
    IterationCapExceeded { cap: usize, last_update: f64 },

    #[error("no sign change of the switching function; check tolerances")]
    NoSignChange,

    #[error("mass defect {defect:e} exceeds tolerance {tolerance:e}")]
    MassDefect { defect: f64, tolerance: f64 },

    #[error("fixed-point map has no bracket: g(0) = {g0}")]
    NoBracket { g0: f64 },

    #[error("bisection stopped after {steps} steps with residual {residual:e}")]
    MaxBisectionSteps { steps: usize, residual: f64 },

    #[error("singular coupling: coefficient {0:e} vanishes")]
    SingularCoupling(f64),

    #[error("equation has no interior root on (eps, 1 - eps)")]
    NoInteriorRoot,

    #[error("singular linear system: determinant {0:e}")]
    SingularSystem(f64),

    #[error("threshold is not interior: {0}")]
    NotInterior(String),

    #[error("perturbed equilibrium left the interior regime at gamma = {gamma}")]
    NonInteriorPerturbation { gamma: f64 },

    #[error("horizon {horizon} too short: discounted tail bound {tail:e} >= 1e-4")]
    InsufficientHorizon { horizon: usize, tail: f64 },

    #[error("histogram bins do not align with the distribution grid")]
    BinMismatch,

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension infeasible: {0}")]
    DimensionInfeasible(String),

    #[error("noise level {level} exceeds the bound sqrt(2)/2")]
    NoiseBound { level: f64 },

    #[error("no direction orthogonal to the testing patterns (dim = {dim}, M' = {m_prime})")]
    NoOrthogonalDirection { dim: usize, m_prime: usize },

    #[error("ambiguous pattern: inner products with patterns {first} and {second} tie")]
    AmbiguousPattern { first: usize, second: usize },

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("step {step} out of range 0..={max}")]
    StepOutOfRange { step: usize, max: usize },

    #[error("infeasible primacy: {0}")]
    InfeasiblePrimacy(String),

    #[error("degenerate size: {0}")]
    DegenerateSize(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid transition model: {0}")]
    InvalidTransition(String),

    #[error("division degenerate: target entry A_{step}[{row}, {col}] is zero")]
    DivisionDegenerate { step: usize, row: usize, col: usize },

    #[error("ambiguous Condition 1: row {row} has a tied maximum")]
    AmbiguousCondition { row: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("reasoning complete: query is already at step {0}")]
    ReasoningComplete(usize),

    #[error("prompt kind mismatch: expected {expected}, got {got}")]
    PromptKind { expected: &'static str, got: &'static str },

    #[error("empty context: the prompt holds only the query column")]
    EmptyContext,

    #[error("balance infeasible: batch size {batch} is not a multiple of K*M = {cells}")]
    BalanceInfeasible { batch: usize, cells: usize },

    #[error("divergence at iteration {iteration}: non-finite {what}")]
    Divergence { iteration: usize, what: &'static str },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

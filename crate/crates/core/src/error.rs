use thiserror::Error;

/// Errors raised by the dynamics, target construction and oracle layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("the Gauss map is undefined at x = 0")]
    GaussAtZero,
    #[error("continued-fraction digit of {x:e} exceeds the cap {cap:e}")]
    DigitCapExceeded { x: f64, cap: f64 },
    #[error("point {0} lies outside [0, 1]")]
    OutOfRange(f64),
    #[error("no closed-form invariant measure for this system; estimate it instead")]
    NoClosedFormMeasure,
    #[error("cylinder for word {word:?} is empty")]
    EmptyCylinder { word: Vec<u64> },
    #[error("branch index {index} does not exist")]
    NoSuchBranch { index: u64 },
    #[error("target is degenerate: {0}")]
    DegenerateTarget(String),
    #[error("no cylinder of rank {rank} fits inside the interval")]
    EmptyApproximation { rank: u32 },
    #[error("no hit within {cap} steps")]
    HittingOverflow { cap: u64 },
    #[error("no return to the reference set within {cap} steps")]
    ReturnOverflow { cap: u64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("word {word:?} has no periodic point")]
    NoFixedPoint { word: Vec<u64> },
    #[error("density has {got} cells but the grid has {expected}")]
    GridMismatch { expected: usize, got: usize },
    #[error("{count} of {n} samples overflowed the hitting cap")]
    TooManyOverflows { count: u64, n: u64 },
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

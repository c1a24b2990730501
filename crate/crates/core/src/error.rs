use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("step law {index} is not centered: mean {mean:e}{hint}")]
    NonCenteredLaw { index: usize, mean: f64, hint: &'static str },

    #[error("{what} does not sum to 1 (got {sum})")]
    NonStochastic { what: String, sum: f64 },

    #[error("markov transition matrix is not irreducible")]
    Reducible,

    #[error("alphabet is empty")]
    EmptyAlphabet,

    #[error("step law {index} has no positive atom")]
    NoPositiveAtom { index: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("value {value} is not on the lattice of unit {unit}")]
    LatticeMismatch { value: f64, unit: f64 },

    #[error("model has no lattice unit; exact dynamic programming unavailable")]
    NoLattice,

    #[error("path has {have} steps, rescaling needs {need}")]
    HorizonTooShort { have: usize, need: usize },

    #[error("all {0} first-passage samples were censored")]
    AllCensored(usize),

    #[error("propagated uncertainty {uncertainty:e} exceeds floor {floor:e}")]
    InsufficientPrecision { uncertainty: f64, floor: f64 },

    #[error("conditioned kernel at time {time}, position {position} has no positive destination")]
    ZeroMass { time: usize, position: i64 },

    #[error("harmonic table has no entry for shift {shift}, position {position}")]
    TableMiss { shift: usize, position: i64 },

    #[error("rejection budget of {0} proposals exhausted")]
    RejectionBudgetExceeded(u64),

    #[error("empty sample")]
    EmptySample,

    #[error("chi-square cell {cell} has expected count {expected} < 5")]
    SparseCells { cell: usize, expected: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("table format: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

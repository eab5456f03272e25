use thiserror::Error;

/// Errors raised by estimation, testing and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum IvError {
    #[error("input contains a non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("too few observations: N = {n} must exceed K_Z + K_W = {k}")]
    TooFewObservations { n: usize, k: usize },

    #[error("instrument matrix has rank zero after collinearity pruning")]
    RankZero,

    #[error("degenerate denominator {value:e} (floor {floor:e})")]
    DegenerateDenominator { value: f64, floor: f64 },

    #[error("saturated first stage: every off-diagonal projection element is zero")]
    SaturatedFirstStage,

    #[error("observation {index} has hat value P_ii = 1; leave-one-out first stage is undefined")]
    UnitLeverage { index: usize },

    #[error("observation {index} has annihilator diagonal {value:e}; it is perfectly fit")]
    PerfectFit { index: usize, value: f64 },

    #[error("leave-out rank collapse when dropping observations {dropped:?}")]
    RankCollapse { dropped: Vec<usize> },

    #[error("estimated variance {value:e} is not positive")]
    NonPositiveVariance { value: f64 },

    #[error("weight matrix violates {property}: max deviation {deviation:e}")]
    StructuralCheck {
        property: &'static str,
        deviation: f64,
    },

    #[error("linear system is singular")]
    Singular,

    #[error("{0}")]
    Unsupported(String),

    #[error("invalid design: {0}")]
    Design(String),
}

pub type Result<T> = std::result::Result<T, IvError>;

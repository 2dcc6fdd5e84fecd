use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("rate overflow at count {count} (scale n = {n})")]
    Overflow { count: u64, n: u64 },

    #[error("absorbing state: total event rate is zero")]
    AbsorbedState,

    #[error("domination violated at site {site} after {transitions} transitions")]
    DominationViolated { site: usize, transitions: u64 },

    #[error("reaction functions are identically zero ({0})")]
    ZeroReaction(&'static str),

    #[error("order violation: k = {k} < ell = {ell}")]
    OrderViolation { k: u32, ell: u32 },

    #[error("fixed point is not at zero: {0}")]
    FixedPointNotAtZero(&'static str),

    #[error("zero is not attracting: leading drift coefficient {coefficient} is not negative")]
    NotAttracting { coefficient: f64 },

    #[error("growth condition violated: f_plus has degree {degree} > 1")]
    GrowthViolation { degree: usize },

    #[error("empty sample")]
    EmptySample,

    #[error("missing event log on trajectory")]
    MissingEventLog,

    #[error("SDE state became non-finite at t = {time}")]
    SdeBlowUp { time: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

use alloc::string::String;

/// Errors raised by the synthesis library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    #[error("degenerate numeric range: min {min} must be below max {max}")]
    DegenerateRange { min: f64, max: f64 },

    #[error("bin count must be at least 1")]
    ZeroBins,

    #[error("value {value:?} of attribute {attr:?} is not a known category")]
    UnknownCategory { attr: String, value: String },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("table does not match the domain: {0}")]
    TableMismatch(String),

    #[error("equicorrelation matrix with corr {corr} in dimension {dims} is not positive definite")]
    NotPositiveDefinite { dims: usize, corr: f64 },

    #[error("marginal attributes {0:?} are invalid for this domain")]
    SpecOutOfRange(alloc::vec::Vec<usize>),

    #[error("marginals are defined over different attribute sets")]
    SpecMismatch,

    #[error("marginal has no positive mass after clipping")]
    ZeroMass,

    #[error("operation needs at least {needed} attributes, got {got}")]
    TooFewAttributes { needed: usize, got: usize },

    #[error("datasets are encoded over different domains")]
    DomainMismatch,

    #[error("insufficient privacy budget: used {used}, requested {requested}, budget {budget}")]
    InsufficientBudget { used: f64, requested: f64, budget: f64 },

    #[error("privacy parameter must be positive and finite, got {0}")]
    InvalidRho(f64),

    #[error("delta must lie in (0, 1), got {0}")]
    InvalidDelta(f64),

    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),

    #[error("exponential mechanism needs at least one candidate")]
    EmptyCandidates,

    #[error("soft marginals support order 1 or 2, got {0}")]
    UnsupportedOrder(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("selection trace has no rounds")]
    NoRounds,

    #[error("cannot aggregate an empty list of reports")]
    EmptyList,

    #[error("reports were produced with different configurations")]
    ConfigMismatch,
}

pub type Result<T> = core::result::Result<T, Error>;

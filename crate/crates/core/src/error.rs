use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("hermite order {order} exceeds the supported maximum {max}")]
    OrderTooLarge { order: usize, max: usize },

    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("standard deviation must be positive, got {0}")]
    NonPositiveStd(f64),

    #[error("correlation {0} outside [-1, 1]")]
    CorrelationDomain(f64),

    #[error("invalid polynomial: {0}")]
    InvalidPoly(String),

    #[error("polynomial has no coefficients")]
    EmptySpec,

    #[error("nonstationary parameters: gamma / n^beta = {ratio} >= 1 (beta={beta}, gamma={gamma}, n={n})")]
    Nonstationary { beta: f64, gamma: f64, n: usize, ratio: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("no mixing time found up to the search cutoff {cutoff}")]
    SearchExhausted { cutoff: usize },

    #[error("incompatible batch: {0}")]
    IncompatibleBatch(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    #[error("insufficient resolution: {0}")]
    Resolution(String),

    #[error("empty sample")]
    EmptySample,

    #[error("degenerate histogram range: all values equal {0}")]
    DegenerateRange(f64),

    #[error("invalid bin count {0} (need at least 10)")]
    TooFewBins(usize),

    #[error("need at least {need} points for a fit, got {got}")]
    InsufficientPoints { need: usize, got: usize },

    #[error("log-log fit needs positive coordinates, got ({0}, {1})")]
    NonPositivePoint(f64, f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("Monte Carlo budget exceeded: {needed} path-steps requested, guard is {guard}")]
    BudgetExceeded { needed: f64, guard: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

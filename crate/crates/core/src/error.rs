use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("transition matrix at index {index}, row {row} sums to {sum} (expected 1)")]
    NonStochasticRow { index: i64, row: usize, sum: f64 },

    #[error("initial law is not a probability vector with strictly positive entries: {0}")]
    InvalidInitial(String),

    #[error("{kappa}-step transition P_{s},{t}({a},{b}) = {value} is below the floor {phi_star}")]
    FloorViolation {
        s: i64,
        t: i64,
        a: usize,
        b: usize,
        value: f64,
        phi_star: f64,
        kappa: usize,
    },

    #[error("null partition class {0} is empty")]
    EmptyPartitionClass(&'static str),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("index {index} lies outside the window [{lo}, {hi}]")]
    IndexOutOfWindow { index: i64, lo: i64, hi: i64 },

    #[error("index order violated: s = {s} > t = {t}")]
    IndexOrder { s: i64, t: i64 },

    #[error("cannot propagate the marginal law backward to index {index}: {reason}")]
    BackwardMarginal { index: i64, reason: String },

    #[error("density is not finite at index {t} for label {label} (epsilon = {epsilon})")]
    NonFiniteDensity { t: i64, label: usize, epsilon: f64 },

    #[error("reference row of the L matrix has zero or non-finite mass")]
    DegenerateDenominator,

    #[error("brute-force enumeration over {paths} paths exceeds the limit of {limit}")]
    WindowTooLarge { paths: f64, limit: u64 },

    #[error("operation requires a binary chain with H1 = {{1}}")]
    NotBinary,

    #[error("operation requires time-homogeneous transitions")]
    NotStationary,

    #[error("operation requires kappa = 1 (spec has kappa = {0})")]
    KappaNotOne(usize),

    #[error("degrees of freedom nu = {0} must exceed 12 for expectation operations")]
    DegreesOfFreedomTooSmall(u32),

    #[error("q-value {value} at position {index} is outside [0, 1]")]
    InvalidQ { index: usize, value: f64 },

    #[error("alpha = {0} is outside (0, 1)")]
    InvalidAlpha(f64),

    #[error("brute-force search supports at most {limit} hypotheses, got {n}")]
    TooManyHypotheses { n: usize, limit: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: String, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("sampler initialization failed: no finite starting point found in {0} attempts")]
    InitFailure(usize),

    #[error("{frac:.0}% of warmup transitions diverged; reduce the step size target")]
    WarmupDivergence { frac: f64 },

    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),

    #[error("empty draw store")]
    EmptyStore,

    #[error("draws with a > 1 must be flipped to 2-a before gradient computation")]
    UnflippedDraws,

    #[error("insufficient coverage: {0}")]
    InsufficientCoverage(String),

    #[error("all importance ratios are -inf: supports appear disjoint")]
    DisjointSupports,

    #[error("nonpositive ratio passed to Pareto-k diagnostic")]
    NonPositiveRatio,

    #[error("sample too small for diagnostic: need {need}, got {got}")]
    SampleTooSmall { need: usize, got: usize },

    #[error("within-chain variance is zero everywhere; diagnostic undefined")]
    DegenerateChains,

    #[error("marginal density underflow on sampled range; the grid looks misconfigured: {0}")]
    RangeMisconfigured(String),

    #[error("quadrature failed to converge after {0} window doublings")]
    QuadratureDivergent(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

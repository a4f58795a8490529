use thiserror::Error;

/// Errors raised by table construction, simulation and inference.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bisection bracket [{lo}, {hi}] does not straddle the indifference point (f(lo)={f_lo:.3e}, f(hi)={f_hi:.3e}); widen lambda_bracket")]
    BracketDoesNotStraddle { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("index table is not strictly decreasing at n={n} ({prev} <= {next}); grid or horizon too coarse")]
    NonMonotoneTable { n: usize, prev: f64, next: f64 },

    #[error("n={n} is outside the index table (n_max={n_max}); build the table with a larger n_max")]
    OutOfTableRange { n: usize, n_max: usize },

    #[error("malformed table file: {0}")]
    MalformedTable(String),

    #[error("arm {arm} has no observations; the initialization phase must sample every arm first")]
    UninitializedArm { arm: usize },

    #[error("policy {policy} is not supported here: {reason}")]
    UnsupportedPolicy { policy: String, reason: String },

    #[error("policy {policy} needs a Gittins table: {reason}")]
    TableMismatch { policy: String, reason: String },

    #[error("non-finite outcome {value} for arm {arm} at patient {patient}")]
    NonFiniteOutcome { arm: usize, patient: usize, value: f64 },

    #[error("test statistic undefined: arm {arm} has n = 0")]
    UndefinedStatistic { arm: usize },

    #[error("calibration requires a global-null scenario, got means {means:?}")]
    NotGlobalNull { means: Vec<f64> },

    #[error("records do not all come from scenario `{expected}` (found `{found}`)")]
    MixedScenarios { expected: String, found: String },

    #[error("records carry no mean trajectories; rerun with trajectory retention enabled")]
    MissingTrajectories,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

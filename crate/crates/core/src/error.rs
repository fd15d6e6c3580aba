use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unknown catalog problem `{0}`")]
    UnknownProblem(String),

    #[error("integration diverged at node {node} (t = {time}): |state| exceeded threshold or became non-finite")]
    Divergence { node: usize, time: f64 },

    #[error("trivial costate pair: p(T) = 0 and p0 = 0")]
    TrivialPair,

    #[error("grid is not aligned with the partition: {0}")]
    MisalignedGrid(String),

    #[error(
        "terminal feasibility stalled at {feasibility:e} over {rounds} outer rounds (target may be unreachable with sampled controls)"
    )]
    InfeasibleStalled { feasibility: f64, rounds: usize },

    #[error("iteration limit reached (feasibility {feasibility:e}, stationarity {stationarity:e})")]
    MaxIterations { feasibility: f64, stationarity: f64 },

    #[error("multiplier norm {norm:e} diverged: possible abnormality or unreachable target")]
    PossibleAbnormality { norm: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("shooting matrix is ill-conditioned (condition number {condition:e}): target unreachable or problem degenerate")]
    Unreachable { condition: f64 },

    #[error("active-set enumeration budget of {budget} exhausted")]
    BudgetExceeded { budget: u64 },

    #[error("reference rejected: error bar {error_bar:e} exceeds limit {limit:e}")]
    ReferenceRejected { error_bar: f64, limit: f64 },

    #[error("parse error in {source_name}: {message}")]
    Parse { source_name: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(source_name: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            message: message.into(),
        }
    }
}

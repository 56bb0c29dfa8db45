use thiserror::Error;

/// Errors raised by the model-averaged testing engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("design is rank deficient for model {model:#x} (rank {rank} of {cols} columns)")]
    RankDeficient { model: u64, rank: usize, cols: usize },

    #[error("residual sum of squares is zero for model {model:#x}; the profiled variance is degenerate")]
    DegenerateVariance { model: u64 },

    #[error(
        "{nu} candidate variables exceeds the exhaustive-scan cap of {cap}; \
         select a subset of variables first (see `select_subset`) or raise the cap"
    )]
    TooManyVariables { nu: usize, cap: usize },

    #[error("column `{0}` has zero variance")]
    ZeroVarianceColumn(String),

    #[error("the tested variable set is empty")]
    EmptyTestedSet,

    #[error("unknown variables: {0:?}")]
    UnknownVariables(Vec<String>),

    #[error("tested set splits the indivisible group {block:?}")]
    InadmissibleGroup { block: Vec<String> },

    #[error("group search exceeded its budget of {budget} evaluated sets")]
    SearchBudgetExceeded { budget: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("numerical procedure failed to converge: {0}")]
    ConvergenceFailure(String),

    #[error("failed to parse data: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

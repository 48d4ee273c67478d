use thiserror::Error;

/// Errors raised by design construction, statistics and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("{count} subjects cannot be split into {blocks} blocks of equal even size")]
    Divisibility { count: usize, blocks: usize },

    #[error("hierarchical blocking needs an even number of blocks, got {0}")]
    OddBlockCount(usize),

    #[error("assignment is not balanced in block {block}: {treated} treated of {size}")]
    Unbalanced {
        block: usize,
        treated: usize,
        size: usize,
    },

    #[error("indices {0:?} are not distinct members of a single block")]
    NotCoBlocked(Vec<usize>),

    #[error("fourth design moment has a pole at block size {0}")]
    MomentPole(usize),

    #[error("sample covariance of the covariates is singular: {0}")]
    SingularCovariance(String),

    #[error("perfect matching needs an even number of subjects, got {0}")]
    OddSubjectCount(usize),

    #[error("asymptotic variance is zero; power is undefined")]
    ZeroVariance,

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

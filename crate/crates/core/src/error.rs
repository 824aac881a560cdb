use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("not a valid density matrix: {0}")]
    InvalidState(String),
    #[error("not a valid POVM: {0}")]
    InvalidPovm(String),
    #[error("all log-likelihoods are -inf")]
    ZeroEvidence,
    #[error("no plausible hypothesis in the tested set; extend the hypothesis set")]
    NoPlausibleHypothesis,
    #[error("truncation tail {tail:.3e} exceeds tolerance {tol:.3e}")]
    TailTooLarge { tail: f64, tol: f64 },
    #[error("zero heralding probability")]
    ZeroHeraldingProbability,
    #[error("joint space dimension {dim} exceeds limit {limit}")]
    SpaceTooLarge { dim: usize, limit: usize },
    #[error("numerical integration failed: {0}")]
    Integration(String),
    #[error("outcome rank {rank} below {target} with {settings} settings")]
    RankDeficient { rank: usize, target: usize, settings: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("fixture parse error: {0}")]
    Fixture(String),
}

pub type Result<T> = std::result::Result<T, Error>;

use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CrfError {
    #[error("a label set needs at least 2 labels, got {0}")]
    TooFewLabels(usize),
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
    #[error("token sequence is empty")]
    EmptySequence,
    #[error("dense feature shape mismatch: expected {expected}, found {found}")]
    DenseShape { expected: usize, found: usize },
    #[error("potential shape mismatch for n={n}, K={k}: node {node}, edge {edge}")]
    PotentialShape {
        n: usize,
        k: usize,
        node: usize,
        edge: usize,
    },
    #[error("non-finite log potential")]
    NonFinite,
    #[error("invalid training target: {0}")]
    InvalidTarget(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}: {1}")]
    Io(String, #[source] io::Error),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EnvError {
    #[error("invalid response model: {0}")]
    InvalidResponseModel(String),
    #[error("invalid latency model: {0}")]
    InvalidLatencyModel(String),
    #[error("frozen pool exhausted for example {example} position {position}")]
    PoolExhausted { example: usize, position: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum GameError {
    #[error("illegal action {0}")]
    IllegalAction(String),
    #[error("not the crowd's turn")]
    NotCrowdTurn,
    #[error("entry {0} is not an in-flight query")]
    NotInFlight(usize),
    #[error("arrival time {arrival} is not after issue time {issue}")]
    ArrivalBeforeIssue { issue: f64, arrival: f64 },
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Config(String),
    #[error("pool does not match dataset: {0}")]
    PoolMismatch(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("{0}: {1}")]
    Io(String, #[source] io::Error),
}

impl HarnessError {
    pub(crate) fn io(path: &std::path::Path, e: io::Error) -> Self {
        HarnessError::Io(path.display().to_string(), e)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BrokerError {
    #[error("stale answer for query {0}")]
    StaleAnswer(u64),
    #[error("unknown query {0}")]
    UnknownQuery(u64),
    #[error("query {query} is not assigned to worker {worker}")]
    NotAssigned { query: u64, worker: u64 },
    #[error("unknown worker {0}")]
    UnknownWorker(u64),
}

//! Crate-wide error type and exit-code mapping for the CLI.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("path count {count} exceeds cap {cap}; use sampled decoding instead")]
    PathCountExceeded { count: u128, cap: u128 },

    #[error("key-set mismatch: {0}")]
    KeyMismatch(String),

    #[error("malformed selection: {0}")]
    MalformedSelection(String),

    #[error("requested {requested} paths but only {available} exist")]
    Oversubscribed { requested: usize, available: u128 },

    #[error("degenerate architecture: latency must be positive, got {0} ms")]
    DegenerateLatency(f64),

    #[error("non-finite loss at outer {outer} epoch {epoch} in term `{term}`")]
    NonFiniteLoss {
        outer: usize,
        epoch: usize,
        term: &'static str,
    },

    #[error(
        "infeasible constraints after {iterations} outer iterations: best decoded latency \
         {best_latency_ms:.3} ms gives {best_throughput_fps:.3} FPS < required {required_fps:.3} FPS"
    )]
    InfeasibleConstraints {
        iterations: usize,
        best_latency_ms: f64,
        best_throughput_fps: f64,
        required_fps: f64,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(
        "stale inputs: params file topology hash {params_hash:#018x} does not match config \
         topology hash {config_hash:#018x}"
    )]
    StaleParams { params_hash: u64, config_hash: u64 },

    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit status for the CLI: 1 config error, 2 infeasible
    /// constraints, 3 I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InfeasibleConstraints { .. } => 2,
            Error::Io(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

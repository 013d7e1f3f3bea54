use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value at index {index} in {what}")]
    NonFinite { what: &'static str, index: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("contraction factor non-positive (2*eta*lambda = {0})")]
    NonPositiveContraction(f64),

    #[error("no stationary floor: eta*lambda = 0 with sigma > 0")]
    NoStationaryFloor,

    #[error("norm diverged at step {step}: V = {value:e}")]
    Diverged { step: u64, value: f64 },

    #[error("step counter overflow")]
    StepOverflow,

    #[error("{0} is not prime")]
    NotPrime(usize),

    #[error("insufficient distinct examples: requested {requested}, available {available}")]
    InsufficientExamples { requested: usize, available: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("input index {index} out of range for {what} of size {size}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("non-finite activation in layer `{0}`")]
    NonFiniteActivation(&'static str),

    #[error("lookup construction infeasible at p = {0}")]
    LookupInfeasible(usize),

    #[error("argmax tie in construction at (a = {a}, b = {b})")]
    ArgmaxTie { a: usize, b: usize },

    #[error("singular linear system")]
    Singular,

    #[error("degenerate spectrum: total energy is zero")]
    DegenerateSpectrum,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("offset exhausts signal: V_t - C is non-positive")]
    OffsetExhaustsSignal,

    #[error("decay base unidentifiable: {0}")]
    Unidentifiable(&'static str),

    #[error("degenerate regressor: all x values are equal")]
    DegenerateX,

    #[error("no consensus: best inlier fraction {best:.3} below required {required:.3}")]
    NoConsensus { best: f64, required: f64 },

    #[error("increment law violates support [0, {m_bound}]: {reason}")]
    IncrementLaw { m_bound: f64, reason: String },

    #[error("no pre-grok points with r_value above the transition filter")]
    NoPreGrokPoints,

    #[error("run `{run_id}`: missing file {path}")]
    MissingRunFile { run_id: String, path: PathBuf },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error at {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("malformed record in {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

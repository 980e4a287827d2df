use std::path::PathBuf;

use thiserror::Error;

/// A single broken invariant found by [`crate::types::validate_config`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("lambda must be positive (got {0})")]
    NonPositiveLambda(f64),
    #[error("sampling-variance scale c must be >= 1 (got {0})")]
    ScaleBelowOne(f64),
    #[error("dt must be positive (got {0})")]
    NonPositiveDt(f64),
    #[error("jump rate nu must be nonnegative (got {0})")]
    NegativeRate(f64),
    #[error("zero-one jump law violated (nu*dt = {0} >= 0.1)")]
    ZeroOneLawViolated(f64),
    #[error("{name} is not symmetric positive-definite")]
    NotPositiveDefinite { name: &'static str },
    #[error("{name} has shape {rows}x{cols}, expected {expected}x{expected}")]
    CovarianceShape {
        name: &'static str,
        rows: usize,
        cols: usize,
        expected: usize,
    },
    #[error("horizon_n must be positive")]
    EmptyHorizon,
    #[error("samples_m must be positive")]
    NoSamples,
    #[error("u_init has length {got}, expected control dimension {expected}")]
    InitLength { got: usize, expected: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {}", join(.0))]
    InvalidConfig(Vec<Violation>),
    #[error("covariance factorization failed")]
    CovarianceFactorization,
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("state diverged at step {step}")]
    StateDiverged { step: usize },
    #[error("control cost undefined for this dynamics")]
    ControlCostUndefined,
    #[error("no viable rollout")]
    NoViableRollout,
    #[error("variance undefined for fewer than 2 trials")]
    VarianceUndefined,
    #[error("invalid physical parameter {name} = {value}")]
    PhysicalParameter { name: &'static str, value: f64 },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

fn join(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

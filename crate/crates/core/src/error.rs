//! Crate-wide error type.

use crate::mdp::PolicyId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("policies act on different action spaces ({left} vs {right} actions)")]
    MismatchedActionSpaces { left: usize, right: usize },

    #[error(
        "discounted return {sum} outside configured bounds [{lower}, {upper}] \
         (bounds misconfigured)"
    )]
    ReturnOutOfBounds { sum: f64, lower: f64, upper: f64 },

    #[error("behavior policy assigns zero probability to action {action} at state {state}")]
    ZeroBehaviorProbability { state: String, action: usize },

    #[error("no policy registered for behavior id {0}")]
    UnknownBehaviorPolicy(PolicyId),

    #[error("need at least {need} samples, got {got}")]
    NotEnoughSamples { need: usize, got: usize },

    #[error("confidence parameter delta must lie in (0, 0.5), got {0}")]
    InvalidDelta(f64),

    #[error("bootstrap group for iteration {iter} is empty")]
    EmptyBootstrapGroup { iter: u32 },

    #[error("cannot allocate {n} trajectories over {m} policies")]
    InvalidAllocation { n: usize, m: usize },

    #[error("allocation has {alloc} entries but variance profile has {profile} proposals")]
    AllocationProfileMismatch { alloc: usize, profile: usize },

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("invalid action id {action} (domain has {n_actions} actions)")]
    InvalidAction { action: usize, n_actions: usize },

    #[error("state out of domain bounds: {0}")]
    StateOutOfBounds(String),

    #[error("config error for key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("malformed record at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("run sets differ between algorithms: {0}")]
    MismatchedRuns(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub fn parse(line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            line,
            reason: reason.into(),
        }
    }
}

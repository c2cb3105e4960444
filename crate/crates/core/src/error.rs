use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator and its tooling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("cannot compute a loss over an empty batch")]
    EmptyBatch,

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("non-finite value detected at episode {episode}: {source}")]
    NonFiniteAtEpisode {
        episode: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("replay buffer overflow (capacity {capacity})")]
    BufferOverflow { capacity: usize },

    #[error("episode bookkeeping violated: {0}")]
    Bookkeeping(String),

    #[error("equality reward undefined for payoffs ({0}, {1}): payoff sum must be positive")]
    RewardDomain(f64, f64),

    #[error("invalid payoff matrix: {0}")]
    InvalidPayoffMatrix(String),

    #[error("population composition sums to {got}, expected {expected}")]
    InvalidComposition { expected: usize, got: usize },

    #[error("unknown population label `{0}`; valid labels: {labels}", labels = crate::simulation::PopulationLabel::valid_labels())]
    UnknownPopulation(String),

    #[error("unknown moral type `{0}`; valid types: S, Ut, aUt, De, mDe, V-Eq, V-In, V-Ki, V-Ag")]
    UnknownMoralType(String),

    #[error("no agent matches moral type {0}")]
    NoMatchingAgent(crate::moral::MoralType),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

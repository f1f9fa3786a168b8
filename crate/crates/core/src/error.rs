use thiserror::Error;

/// Errors raised by the solver engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),

    #[error("action set of {size} rules exceeds the cap of {cap}; use a smaller action resolution")]
    ActionSetTooLarge { size: u128, cap: usize },

    #[error("stage game is not zero-sum")]
    NotZeroSum,

    #[error("{players}-player stage game has no pure equilibrium and mixed solving supports two players only")]
    NoPureEquilibrium { players: usize },

    #[error("state is not a point of the quantization grid; project it first")]
    OffGrid,

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("learning rate requested for a tuple that has not been counted")]
    UncountedVisit,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("forward cache does not belong to this network")]
    MissingCache,

    #[error("degenerate fit input: {0}")]
    DegenerateFit(String),

    #[error("training failed at episode {episode}, step {step}: {source}")]
    Training {
        episode: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at(self, episode: usize, step: usize) -> Error {
        match self {
            e @ Error::Training { .. } => e,
            e => Error::Training { episode, step, source: Box::new(e) },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

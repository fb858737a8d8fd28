use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {what}{}", component.map(|j| format!(" (component {j})")).unwrap_or_default())]
    NonFinite {
        what: &'static str,
        component: Option<usize>,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range for {what} of size {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid mixture spec: {0}")]
    InvalidSpec(String),

    #[error("invalid ladder: {0}")]
    InvalidLadder(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid chain: {0}")]
    InvalidChain(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid proposal: {0}")]
    InvalidProposal(String),

    #[error("no analytic normalizer for the {0} local potential")]
    UnsupportedNormalizer(&'static str),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("state space of size {n} exceeds the enumeration limit of {max}")]
    SizeLimit { n: usize, max: usize },

    #[error("insufficient samples: got {got}, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },

    #[error("quadrature did not converge (estimated error {residual:e})")]
    Quadrature { residual: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument fell outside its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Vector or parameter dimensions do not line up.
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    /// Timesteps were not ordered as the operation requires.
    #[error("timestep order violation: {0}")]
    TimestepOrder(String),

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A schedule failed one of its construction invariants.
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    /// Reward statistics were degenerate in a way that has no exact answer.
    #[error("degenerate reward statistics: {0}")]
    DegenerateStats(String),

    /// A dataset pair was missing its smoothed label.
    #[error("missing label for pair {0}")]
    MissingLabel(String),

    /// A computation graph was asked to backpropagate twice.
    #[error("graph already consumed by a backward pass")]
    GraphConsumed,

    /// Two models that must share an architecture do not.
    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    /// Training produced a non-finite loss or gradient.
    #[error("divergence at step {step}: {what}")]
    Divergence { step: u64, what: String },

    /// A config file or flag could not be interpreted.
    #[error("config error: {0}")]
    Config(String),

    /// A data or checkpoint file could not be parsed.
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 for config/usage problems, 3 for
    /// training divergence, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::InvalidSchedule(_) => 2,
            Error::Divergence { .. } => 3,
            _ => 1,
        }
    }
}

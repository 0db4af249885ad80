use thiserror::Error;

/// Errors produced by the kernel, posterior, selection and data layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A cosine argument fell outside `[-1, 1]` by more than the clamp tolerance.
    #[error("cosine argument {0} outside [-1, 1]")]
    Domain(f64),

    /// Zero-norm input with zero bias variance: the kernel recursion is 0/0.
    #[error("degenerate input at index {index}: zero norm with sigma_b = 0")]
    DegenerateInput { index: usize },

    /// An operation's precondition was violated.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Vector or matrix dimensions do not match.
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    /// The index is already part of the conditioning set.
    #[error("index {0} is already selected")]
    DuplicateIndex(usize),

    /// Factorization failed even at the largest jitter of the ladder.
    #[error("singular system: {0}")]
    Singular(String),

    /// Training loss blew up past the divergence threshold.
    #[error("training diverged at epoch {epoch}: loss {loss:e} (initial {initial:e})")]
    Divergence { epoch: usize, loss: f64, initial: f64 },

    /// Every candidate has been selected already.
    #[error("pool exhausted after {0} selections")]
    PoolExhausted(usize),

    /// The optimizer requires a submodular criterion.
    #[error("criterion {0} is not submodular; use plain or stochastic greedy")]
    NotSubmodular(String),

    /// Input data could not be parsed or is malformed.
    #[error("data error: {0}")]
    Data(String),

    /// A data-file cell could not be parsed.
    #[error("line {line}, column {column}: cannot parse {value:?} as a number")]
    MalformedCell { line: u64, column: usize, value: String },

    /// The label oracle could not supply a label.
    #[error("label oracle failed for index {index}: {reason}")]
    Oracle { index: usize, reason: String },

    /// Configuration could not be parsed or is inconsistent.
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn pre(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    /// True for failures rooted in floating-point conditioning rather than input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular(_) | Error::Divergence { .. } | Error::Domain(_)
        )
    }
}

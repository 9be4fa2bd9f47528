use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the arguments was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A conditional CDF column carries no resolvable mass: the unnormalized
    /// finite-difference top entry fell at or below the degeneracy guard.
    #[error("degenerate conditional at x column {column}: mass {mass:.3e} <= guard {guard:.3e}")]
    DegenerateConditional { column: usize, mass: f64, guard: f64 },
    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Shorthand for the pervasive precondition failure.
pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

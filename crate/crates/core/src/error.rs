use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Shape mismatch, non-finite entries or otherwise malformed input.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The input is well-formed but outside the operation's domain, e.g. an
    /// unstable closed loop or a terminal cost outside the region of decreasing.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative method stopped before reaching its tolerance.
    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("unbounded: {0}")]
    Unbounded(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

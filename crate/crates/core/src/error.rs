use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A log-barrier argument left the open domain.
    #[error("barrier domain violated at coordinate {index} (argument {argument:e})")]
    Domain { index: usize, argument: f64 },

    #[error("non-finite value in {what} at entry {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("matrix is singular: pivot {pivot} below threshold")]
    Singular { pivot: usize },

    #[error("linear solver failed after {shifts} regularization shifts")]
    LinearSolverSingular { shifts: usize },

    #[error("inner solver did not converge in {iterations} iterations (residual {residual:e})")]
    InnerSolverFailure { iterations: usize, residual: f64 },

    #[error("failed to parse problem: {0}")]
    Parse(String),

    #[error("{source} (outer iteration {iteration})")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(self, iteration: usize) -> Self {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }

    /// Strips any iteration context.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtIteration { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

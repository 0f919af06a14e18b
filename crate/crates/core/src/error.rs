use thiserror::Error;

/// Errors raised by the solvers and the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {context} at node {index}")]
    NonFinite { context: &'static str, index: usize },

    #[error("no convergence after {iterations} iterations (residual {residual:e}, tol {tol:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    #[error("{rejected} of {total} simulated paths rejected as non-finite")]
    PathsRejected { rejected: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

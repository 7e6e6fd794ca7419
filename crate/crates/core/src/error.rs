use thiserror::Error;

/// Errors raised by the bilevel library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("estimator state error: {0}")]
    State(String),

    #[error("iterate diverged at iteration {iteration} (non-finite {channel} estimate)")]
    Diverged { iteration: usize, channel: &'static str },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("parse error at byte offset {offset}{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Parse {
        offset: u64,
        line: Option<usize>,
        message: String,
    },

    #[error("no feasible step sizes: {0}")]
    Infeasible(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

use thiserror::Error;

/// Errors produced by the modelling, analysis and simulation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty system")]
    EmptySystem,

    #[error("self-loop at bus {0}")]
    SelfLoop(usize),

    #[error("graph is not connected")]
    Disconnected,

    #[error("index {index} out of range for {what} (count {count})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        count: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error(
        "equilibrium solver did not converge after {iterations} iterations (best residual {residual:.3e})"
    )]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("resolvent (jwI - A) is singular at omega = {omega} rad/s")]
    SingularResolvent { omega: f64 },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("simulation diverged at t = {time} s: {detail}")]
    Diverged { time: f64, detail: String },

    #[error("scenario error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

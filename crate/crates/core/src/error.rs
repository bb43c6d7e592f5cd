use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Inconsistent dimensions, invalid matrices or malformed inputs.
    #[error("configuration error: {0}")]
    Config(String),

    /// The budget admits no schedule.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// A covariance or information matrix lost definiteness. `step` is the
    /// 1-based time step when known.
    #[error("numerical error{}: {msg}", step.map(|k| format!(" at step {k}")).unwrap_or_default())]
    Numerical { step: Option<usize>, msg: String },

    /// Alternating projection did not reach the feasibility tolerance.
    #[error(
        "projection did not converge after {sweeps} sweeps \
         (row residual {row_residual:e}, budget residual {budget_residual:e})"
    )]
    NoConvergence {
        sweeps: usize,
        row_residual: f64,
        budget_residual: f64,
    },

    /// Problem too large for exhaustive enumeration.
    #[error("size guard exceeded: {0}")]
    SizeGuard(String),
}

impl Error {
    pub(crate) fn numerical(step: usize, msg: impl Into<String>) -> Self {
        Error::Numerical {
            step: Some(step),
            msg: msg.into(),
        }
    }
}

use alloc::string::String;

/// Errors produced by the knockoff toolkit.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, found {found} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is not positive semidefinite (minimum eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("matrix is singular beyond the allowed jitter ({0})")]
    Singular(&'static str),

    #[error("s vector is infeasible: min eigenvalue of 2*Sigma - diag(s) is {margin:e}")]
    InfeasibleS { margin: f64 },

    #[error("observed state has zero probability at coordinate {coordinate}")]
    ZeroProbabilityState { coordinate: usize },

    #[error("response is degenerate: {0}")]
    DegenerateResponse(&'static str),

    #[error("solver did not converge after {iterations} iterations (KKT violation {violation:e})")]
    NoConvergence { iterations: usize, violation: f64 },
}

impl Error {
    /// True for failures of a numerical routine, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPsd { .. }
                | Error::Singular(_)
                | Error::InfeasibleS { .. }
                | Error::NoConvergence { .. }
        )
    }
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

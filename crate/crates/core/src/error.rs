use nalgebra::Complex;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value in component `{component}` at t = {t}")]
    NonFinite { component: String, t: f64 },

    #[error("step limit of {limit} exceeded at t = {t}")]
    StepLimit {
        limit: usize,
        t: f64,
        state: Vec<f64>,
    },

    #[error("step size underflow (h = {h:e}) at t = {t}")]
    StepUnderflow { h: f64, t: f64, state: Vec<f64> },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("characteristic root iteration did not converge; last iterate {last}")]
    RootNotConverged { last: Complex<f64>, residual: f64 },

    #[error("{failed} of {total} realizations failed; first: {first}")]
    EnsembleFailed {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

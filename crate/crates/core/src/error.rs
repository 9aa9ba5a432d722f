use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter failed validation (non-positive scale, alpha outside (0,1), ...).
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// A function was evaluated outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Adaptive quadrature exhausted its subdivision budget.
    #[error(
        "quadrature did not converge after {subdivisions} subdivisions \
         (best estimate {value}, error estimate {error_estimate})"
    )]
    Quadrature { value: f64, error_estimate: f64, subdivisions: usize },

    #[error("objective does not change sign over [{lo}, {hi}] (f(lo) = {f_lo}, f(hi) = {f_hi})")]
    NoSignChange { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("root finder hit the iteration limit (last iterate {last})")]
    RootIterations { last: f64 },

    /// Event probability underflowed: the design cannot observe events.
    #[error("no events observable: event probability {probability:e} in the {arm} arm")]
    NoEvents { arm: &'static str, probability: f64 },

    /// The enrolment target is below the infinite-follow-up limit.
    #[error(
        "infeasible: no finite follow-up reaches N = {target} (asymptotic lower bound {lower}); \
         extend accrual or relax the design"
    )]
    InfeasibleBelow { target: f64, lower: f64, upper: f64 },

    /// The enrolment target exceeds the requirement at the end of accrual.
    #[error(
        "infeasible: N = {target} exceeds the requirement at the end of accrual ({upper}); \
         the trial is already powered with zero follow-up"
    )]
    InfeasibleAbove { target: f64, lower: f64, upper: f64 },

    /// Data cannot support the requested fit.
    #[error("fit error: {0}")]
    Fit(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter { .. } | Error::Domain(_) => ErrorKind::Validation,
            Error::InfeasibleBelow { .. } | Error::InfeasibleAbove { .. } => ErrorKind::Infeasible,
            _ => ErrorKind::Computation,
        }
    }
}

/// Coarse classification used by front ends to pick exit codes and statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Inputs violate a documented constraint.
    Validation,
    /// Valid inputs, but a numerical or statistical step failed.
    Computation,
    /// No follow-up duration meets the enrolment target.
    Infeasible,
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate bandwidth: all rows are identical")]
    DegenerateBandwidth,

    #[error("no closed-form kernel for the {0} family; use random features")]
    UnsupportedClosedForm(&'static str),

    #[error("density {0} is improper and cannot be sampled")]
    ImproperDensity(&'static str),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("empty group: {0}")]
    EmptyGroup(String),

    #[error("QP is infeasible")]
    Infeasible,

    #[error("weak instrument: denominator {denominator:e} is within 1e-6 of zero")]
    WeakInstrument { denominator: f64 },

    #[error("perfect separation in logistic regression (coefficient norm {norm:.3e}); a ridge fallback of 1e-6 did not converge")]
    Separation { norm: f64 },

    #[error("logistic regression did not converge in {0} iterations")]
    NoConvergence(usize),

    #[error("degenerate resample: {0}")]
    DegenerateSubsample(String),

    #[error("degenerate scenario: complier fraction {fraction:e} below 1e-3")]
    DegenerateScenario { fraction: f64 },

    #[error("study failed: {0}")]
    Study(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Whether the error stems from a numerical failure rather than invalid input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateBandwidth
                | Error::Infeasible
                | Error::WeakInstrument { .. }
                | Error::Separation { .. }
                | Error::NoConvergence(_)
                | Error::DegenerateSubsample(_)
                | Error::DegenerateScenario { .. }
                | Error::Study(_)
        )
    }
}

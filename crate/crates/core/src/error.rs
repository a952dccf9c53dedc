use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point outside the domain of {potential}: {detail}")]
    Domain { potential: String, detail: String },

    #[error("declared constant {name}={value} violated on a sampled pair ({detail})")]
    Constant {
        name: &'static str,
        value: f64,
        detail: String,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("matrix has eigenvalue {eigenvalue} below -1e-10")]
    Spectrum { eigenvalue: f64 },

    #[error("no conjugate available for {0}")]
    ConjugateUnavailable(String),

    #[error("insufficient data: {usable} usable positive gaps, need {required}")]
    InsufficientData { usable: usize, required: usize },

    #[error("no valid samples for the PL probe")]
    NoValidSamples,

    #[error("line search failed: step {alpha:e} underflowed")]
    LineSearchFailure { alpha: f64 },

    #[error("iterate left the domain of the potential during {stage}")]
    DomainFailure { stage: &'static str },

    #[error("invalid step size {dt}: {detail}")]
    StepSize { dt: f64, detail: String },

    #[error("lambda bracket [{lo:e}, {hi:e}] does not contain the dual minimizer")]
    Bracket { lo: f64, hi: f64 },

    #[error("weights are not on the simplex (sum {sum}, min {min})")]
    Weight { sum: f64, min: f64 },

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("unknown {kind} '{name}' (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn domain(potential: &str, detail: impl Into<String>) -> Self {
        Error::Domain {
            potential: potential.to_string(),
            detail: detail.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite state produced at step {step}")]
    NonFiniteState { step: usize },

    #[error("posterior mean is not finite")]
    NonFinitePosterior,

    /// An integrand returned NaN or infinity. `point` is the offending sample,
    /// state coordinates followed by noise coordinates.
    #[error("non-finite integrand value at sample {index} (point {point:?})")]
    NonFiniteIntegrand { index: usize, point: Vec<f64> },

    #[error("covariance is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("covariance is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("conditioning failed: innovation covariance is singular beyond the jitter budget")]
    SingularInnovation,

    #[error(
        "feature Gram matrix is rank deficient beyond the jitter budget; \
         reduce the feature set or enable standardization"
    )]
    RankDeficientFeatures,

    #[error("feature `{name}` must return a leading constant 1, got {got}")]
    FeatureConstant { name: String, got: f64 },

    #[error("grid coverage: {0}")]
    GridCoverage(String),

    #[error("measurement {y} lies outside the model support at grid resolution")]
    EmptyConditional { y: f64 },

    #[error("model has no analytic likelihood")]
    MissingLikelihood,

    #[error("config: {0}")]
    Config(String),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    /// True for failures of the numerics (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFiniteState { .. }
            | Error::NonFinitePosterior
            | Error::NonFiniteIntegrand { .. }
            | Error::NotPositiveSemidefinite { .. }
            | Error::NotSymmetric { .. }
            | Error::SingularInnovation
            | Error::RankDeficientFeatures
            | Error::GridCoverage(_)
            | Error::EmptyConditional { .. } => true,
            Error::AtStep { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("node {0} has no neighbours")]
    IsolatedNode(usize),

    #[error("autocorrelation rho = {0} outside (-1, 1)")]
    RhoOutOfRange(f64),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("scale vector h must be positive (entry {index} = {value})")]
    NonPositiveH { index: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("optimizer did not converge: {0}")]
    NoConvergence(String),

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("unknown target `{0}`")]
    UnknownTarget(String),

    #[error("unsupported perturbation direction: {0}")]
    UnsupportedDirection(String),

    #[error("singular latent structure: {0}")]
    SingularStructure(String),

    #[error("improper prior for `{0}`; prior predictive draws need proper priors")]
    ImproperPrior(String),

    #[error("a posterior fit is required for this predictive scheme")]
    MissingPosterior,

    #[error("too few draws: need at least {needed}, got {got}")]
    TooFewDraws { needed: usize, got: usize },

    #[error("log-likelihood is not finite at {0}")]
    NonFiniteLoglik(String),

    #[error("reference distribution is degenerate (variance {0:e})")]
    DegenerateReference(f64),

    #[error("I0 = {0} is not positive; the I0 reference is undefined")]
    NegativeInformation(f64),

    #[error("weights do not form a probability vector: {0}")]
    WeightMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl Error {
    /// Errors caused by the input or configuration rather than by the
    /// numerics.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::Parse(_)
                | Error::InvalidParameter(_)
                | Error::InvalidDimension(_)
                | Error::DimensionMismatch(_)
                | Error::IsolatedNode(_)
                | Error::RhoOutOfRange(_)
                | Error::NonPositiveH { .. }
                | Error::UnknownTarget(_)
                | Error::UnsupportedDirection(_)
                | Error::ImproperPrior(_)
                | Error::MissingPosterior
                | Error::TooFewDraws { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("time {requested} lies outside the admissible range [{lo}, {hi}]")]
    TimeOutOfRange { requested: f64, lo: f64, hi: f64 },

    #[error("non-finite value produced by {what}")]
    NonFinite { what: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("regression at step {step} is rank deficient (rank {rank}, samples {samples})")]
    RankDeficient { step: usize, rank: usize, samples: usize },

    #[error("fixed-point iteration failed to converge at step {step}")]
    FixedPoint { step: usize },

    #[error("negative branch probability {prob:.3e} in lattice at step {step}")]
    LatticeProbability { step: usize, prob: f64 },

    #[error("CFL/monotonicity condition violated: dt={dt:.3e} exceeds stable limit {limit:.3e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("dimension cap exceeded: segment {segment} has {dims} spatial dimensions (cap {cap})")]
    DimensionCap { segment: usize, dims: usize, cap: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument { name, reason: reason.into() }
    }

    /// True for errors that stem from numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::RankDeficient { .. }
                | Error::FixedPoint { .. }
                | Error::LatticeProbability { .. }
                | Error::Cfl { .. }
        )
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

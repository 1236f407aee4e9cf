use thiserror::Error;

use crate::geometry::Frame;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("frame mismatch: expected a transform into {expected}, found one into {found}")]
    FrameMismatch { expected: Frame, found: Frame },

    #[error("integration diverged at t = {time:.3} s: {quantity} is not finite")]
    Divergence { time: f64, quantity: &'static str },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("unknown {what} `{name}`")]
    Unknown { what: &'static str, name: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("timestamps are not monotone at sample {index}")]
    NonMonotone { index: usize },

    #[error("degenerate registration: only {found} correspondences (need {required})")]
    DegenerateRegistration { found: usize, required: usize },

    #[error("voxel resolution mismatch: {left} vs {right}")]
    ResolutionMismatch { left: f64, right: f64 },

    #[error("cannot compare reports from different setups: {0}")]
    MismatchedReports(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("run `{context}` failed: {source}")]
    Run {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { field: field.into(), reason: reason.into() }
    }
}

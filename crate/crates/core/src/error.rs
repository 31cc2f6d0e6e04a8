use crate::sites::SiteLabel;

/// Errors produced by the simulation and tomography routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown site {0}")]
    UnknownSite(SiteLabel),
    #[error("site {0} listed more than once")]
    DuplicateSite(SiteLabel),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("bond dimension {required} exceeds max_bond {max_bond} (truncation error {error:.3e})")]
    BondOverflow {
        required: usize,
        max_bond: usize,
        error: f64,
    },
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("outcome has zero probability")]
    ZeroProbability,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad input rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::UnknownSite(_)
                | Error::DuplicateSite(_)
                | Error::DimensionMismatch { .. }
                | Error::InvalidState(_)
                | Error::InvalidParameter { .. }
                | Error::Capacity(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::controllers::ControlLaw;

/// Machine-readable reason attached to validation failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReasonCode {
    NonUniqueTarget,
    BadGain,
    BadGainBound,
    SingularKi,
    LeaderMismatch,
    NoFollowers,
    BadTimeGrid,
    BadProfile,
    DimensionMismatch,
    InvalidGraph,
    InconsistentReference,
    GammaTooLarge,
}

impl ReasonCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReasonCode::NonUniqueTarget => "NON_UNIQUE_TARGET",
            ReasonCode::BadGain => "BAD_GAIN",
            ReasonCode::BadGainBound => "BAD_GAIN_BOUND",
            ReasonCode::SingularKi => "SINGULAR_KI",
            ReasonCode::LeaderMismatch => "LEADER_MISMATCH",
            ReasonCode::NoFollowers => "NO_FOLLOWERS",
            ReasonCode::BadTimeGrid => "BAD_TIME_GRID",
            ReasonCode::BadProfile => "BAD_PROFILE",
            ReasonCode::DimensionMismatch => "DIMENSION_MISMATCH",
            ReasonCode::InvalidGraph => "INVALID_GRAPH",
            ReasonCode::InconsistentReference => "INCONSISTENT_REFERENCE",
            ReasonCode::GammaTooLarge => "GAMMA_TOO_LARGE",
        }
    }
}

impl fmt::Display for ReasonCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("cannot project onto the complement of a zero vector")]
    ZeroVector,
    #[error("agents {0} and {1} are coincident")]
    CoincidentAgents(usize, usize),
    #[error("no desired bearing for edge ({0}, {1})")]
    MissingBearing(usize, usize),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("follower block of the bearing Laplacian is singular (sigma_min = {sigma_min:e})")]
    SingularFollowerBlock { sigma_min: f64 },
    #[error("K_i is singular at follower {follower}: its desired bearings are collinear")]
    SingularKi { follower: usize },
    #[error("time {0} is outside the maneuver profile domain")]
    TimeOutOfDomain(f64),
    #[error("invalid maneuver profile: {0}")]
    InvalidProfile(String),
    #[error("{0} is not supported by this operation")]
    UnsupportedLaw(ControlLaw),
    #[error("gamma {gamma} must be below the minimum target distance {min_distance}")]
    GammaTooLarge { gamma: f64, min_distance: f64 },
    #[error("reference configuration violates its own bearings (residual {residual:e})")]
    InconsistentReference { residual: f64 },
    #[error("eigenvalue iteration did not converge")]
    NoConvergence,
    #[error("state norm exceeded 1e12 at t = {t}")]
    NumericalBlowup { t: f64 },
    #[error("{code}: {message}")]
    Validation { code: ReasonCode, message: String },
}

impl Error {
    pub fn validation(code: ReasonCode, message: impl Into<String>) -> Self {
        Error::Validation {
            code,
            message: message.into(),
        }
    }

    /// Reason code for reporting, when one applies.
    pub fn reason_code(&self) -> Option<ReasonCode> {
        match self {
            Error::Validation { code, .. } => Some(*code),
            Error::SingularFollowerBlock { .. } => Some(ReasonCode::NonUniqueTarget),
            Error::SingularKi { .. } => Some(ReasonCode::SingularKi),
            Error::InvalidGraph(_) => Some(ReasonCode::InvalidGraph),
            Error::DimensionMismatch { .. } => Some(ReasonCode::DimensionMismatch),
            Error::InvalidProfile(_) | Error::TimeOutOfDomain(_) => Some(ReasonCode::BadProfile),
            Error::InconsistentReference { .. } => Some(ReasonCode::InconsistentReference),
            Error::GammaTooLarge { .. } => Some(ReasonCode::GammaTooLarge),
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    #[error("operation on an empty interval: {0}")]
    EmptyInterval(&'static str),

    #[error("degenerate quadratic: 0*x^2 + 0*x + {c} <= 0 has no solution")]
    DegenerateQuadratic { c: f64 },

    #[error("no realizable braking acceleration (empty voltage-feasible set)")]
    NoRealizableBraking,

    #[error("plant state became non-finite at t = {time:.6} s (q = {q}, qd = {qd}, iq = {iq})")]
    NonFiniteState { time: f64, q: f64, qd: f64, iq: f64 },

    #[error("trace is empty")]
    EmptyTrace,

    #[error("trace never comes within 10 % of a position bound")]
    NoBoundaryApproach,

    #[error("metric window has {len} samples, need at least 2")]
    WindowTooShort { len: usize },

    #[error("scenario `{path}`: {message}")]
    Scenario { path: PathBuf, message: String },

    #[error("scenario validation failed for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("nothing to run: no scenario files in {}", .0.display())]
    NothingToRun(PathBuf),

    #[error("unknown controller `{0}` (expected vra, vbac-ab, vbac-cb, vbac-mor or raw)")]
    UnknownController(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

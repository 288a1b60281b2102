use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e}, tolerance {tolerance:e})")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("negative diagonal entry {value} at index {index}")]
    NegativeDiagonal { index: usize, value: f64 },

    #[error("invalid correlation: k*c^2 = {kc2} must be < 1")]
    InvalidCorrelation { kc2: f64 },

    #[error("invalid k = {k}: need 1 <= k < p = {p}")]
    InvalidK { k: usize, p: usize },

    #[error("invalid model family: {0}")]
    InvalidFamily(String),

    #[error("enumeration of {count} items exceeds the cap of {cap}")]
    EnumerationLimit { count: f64, cap: u64 },

    /// Model indices are reported 1-based.
    #[error("design restricted to model {model:?} is rank deficient")]
    ModelRankDeficient { model: Vec<usize> },

    #[error("column {index} has zero norm")]
    ZeroColumn { index: usize },

    #[error("kappa = {kappa} is outside [0, 1)")]
    KappaOutOfRange { kappa: f64 },

    #[error("delta = {delta} is outside [0, 1)")]
    DeltaOutOfRange { delta: f64 },

    #[error("q = {q} must be at least 2")]
    QLessThanTwo { q: usize },

    #[error("no root: H({t}) = {value} is still above level {level}")]
    NoRoot { t: f64, value: f64, level: f64 },

    #[error("{reps} replicates requested, at least {min} required")]
    TooFewReps { reps: usize, min: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotSymmetric { .. } => "NotSymmetric",
            Error::NegativeDiagonal { .. } => "NegativeDiagonal",
            Error::InvalidCorrelation { .. } => "InvalidCorrelation",
            Error::InvalidK { .. } => "InvalidK",
            Error::InvalidFamily(_) => "InvalidFamily",
            Error::EnumerationLimit { .. } => "EnumerationLimit",
            Error::ModelRankDeficient { .. } => "ModelRankDeficient",
            Error::ZeroColumn { .. } => "ZeroColumn",
            Error::KappaOutOfRange { .. } => "KappaOutOfRange",
            Error::DeltaOutOfRange { .. } => "DeltaOutOfRange",
            Error::QLessThanTwo { .. } => "QLessThanTwo",
            Error::NoRoot { .. } => "NoRoot",
            Error::TooFewReps { .. } => "TooFewReps",
            Error::Domain(_) => "DomainError",
            Error::Parse(_) => "ParseError",
            Error::Io(_) => "IoError",
        }
    }

    /// Process exit code: 2 usage/validation, 3 numeric failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoRoot { .. }
            | Error::EnumerationLimit { .. }
            | Error::ModelRankDeficient { .. }
            | Error::NotSymmetric { .. } => 3,
            Error::Io(_) => 4,
            _ => 2,
        }
    }
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

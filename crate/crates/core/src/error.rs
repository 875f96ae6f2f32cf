//! Shared error type for construction and checker failures.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("leaf weight at index {index} is {value}, must be strictly positive")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("leaf weights sum to {sum}, more than 1e-9 away from 1")]
    WeightsDoNotSumToOne { sum: f64 },

    #[error("tree has no leaves")]
    EmptyTree,

    #[error("{context}: expected {expected} leaves, got {got}")]
    SpaceMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("nodewise maximum of an empty family")]
    EmptyFamily,

    #[error("axiom battery is empty")]
    EmptyBattery,

    #[error("measure mass {mass} exceeds 1")]
    MassExceedsOne { mass: f64 },

    #[error("conjugate search grid has {points} points, budget is {budget}")]
    GridTooLarge { points: f64, budget: f64 },

    #[error("time indices violate s <= t <= u <= horizon: s={s} t={t} u={u} horizon={horizon}")]
    TimeOrderViolation {
        s: usize,
        t: usize,
        u: usize,
        horizon: usize,
    },

    #[error("event is not a union of time-{t} atoms")]
    NotMeasurableEvent { t: usize },

    #[error("discount scale factor at time {t} is {value}, must be > 1 on every atom")]
    GammaNotGreaterThanOne { t: usize, value: f64 },

    #[error("discount factor {value} outside [0, 1]")]
    FactorOutOfRange { value: f64 },

    #[error("only {found} non-vacuous premise pairs, need at least {needed}")]
    InsufficientNonVacuousPairs { found: usize, needed: usize },

    #[error("structural precondition failed: {failed}")]
    PreconditionNotMet { failed: String },

    #[error("family is not closed: no member realizes {instance}")]
    NotClosed { instance: String },

    #[error("model has no dual pair table: {context}")]
    NoPairTable { context: String },

    #[error("variable is not measurable at time {t} (finest constant level is {level})")]
    NotAdapted { t: usize, level: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } => 2,
            Error::SpaceMismatch { .. } => 3,
            Error::InsufficientNonVacuousPairs { .. } => 4,
            _ => 2,
        }
    }
}

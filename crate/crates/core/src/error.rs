use thiserror::Error;

/// Errors raised anywhere in the loop toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("inner loop is not bistable: K+ = {k_plus} must exceed a/b = {threshold}")]
    NotBistable { k_plus: f64, threshold: f64 },

    #[error("inner loop is singular (K+ b/a = 1) and has no unique solution at r = {r}")]
    SingularLoop { r: f64 },

    #[error("state dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("integrator frequency response is undefined at omega = 0")]
    IntegratorAtDc,

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("period logarithm argument {value} is not above 1; no oscillation in this parameter region")]
    NonPositiveLogArgument { value: f64 },

    #[error("root locus of order {n} has no imaginary-axis crossing")]
    NoCrossing { n: u32 },

    #[error("trajectory never reaches a switching threshold")]
    NoOscillation,

    #[error("integration step brackets more than one switching event near t = {time}")]
    StepTooLarge { time: f64 },

    #[error("amplitude {amplitude} outside the linear range [0, {limit})")]
    AmplitudeOutOfRange { amplitude: f64, limit: f64 },

    #[error("trace too short: {cycles} steady cycles available, at least 4 required")]
    TraceTooShort { cycles: usize },

    #[error("invalid simulation settings: {0}")]
    InvalidSettings(String),

    #[error("csv output failed: {0}")]
    Csv(String),
}

/// Coarse grouping used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Simulation,
    Analytic,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidParameter { .. }
            | Error::DimensionMismatch { .. }
            | Error::AmplitudeOutOfRange { .. }
            | Error::InvalidSettings(_)
            | Error::Csv(_) => ErrorClass::Config,
            Error::SingularLoop { .. }
            | Error::NoOscillation
            | Error::StepTooLarge { .. }
            | Error::TraceTooShort { .. } => ErrorClass::Simulation,
            Error::NotBistable { .. }
            | Error::IntegratorAtDc
            | Error::Unsupported(_)
            | Error::NonPositiveLogArgument { .. }
            | Error::NoCrossing { .. } => ErrorClass::Analytic,
        }
    }

    /// Short variant name, stable across releases (used in reports).
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "InvalidParameter",
            Error::NotBistable { .. } => "NotBistable",
            Error::SingularLoop { .. } => "SingularLoop",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::IntegratorAtDc => "IntegratorAtDc",
            Error::Unsupported(_) => "Unsupported",
            Error::NonPositiveLogArgument { .. } => "NonPositiveLogArgument",
            Error::NoCrossing { .. } => "NoCrossing",
            Error::NoOscillation => "NoOscillation",
            Error::StepTooLarge { .. } => "StepTooLarge",
            Error::AmplitudeOutOfRange { .. } => "AmplitudeOutOfRange",
            Error::TraceTooShort { .. } => "TraceTooShort",
            Error::InvalidSettings(_) => "InvalidSettings",
            Error::Csv(_) => "Csv",
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

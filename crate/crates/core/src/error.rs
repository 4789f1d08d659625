use thiserror::Error;

/// Errors raised by the library. Validation failures carry the offending
/// field so the CLI can report them verbatim.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    Domain { field: &'static str, reason: String },

    #[error("simulation overflow at step {step} of {steps} (state = {state})")]
    SimulationOverflow { step: usize, steps: usize, state: f64 },

    #[error("importance weight underflow: P(S_T > K) = {q} for strike {strike}")]
    ImportanceWeightUnderflow { q: f64, strike: f64 },

    #[error("importance sampling is only defined for level-0 payoff targets (level {level})")]
    ImportanceSamplingLevel { level: u32 },

    #[error("training diverged at step {step}: loss = {loss}, learning rate = {rate}")]
    TrainingDiverged { step: usize, loss: f64, rate: f64 },

    #[error("level {level}: {source}")]
    Level {
        level: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("level count exceeded cap {cap} without meeting the bias criterion")]
    LevelCap { cap: u32 },

    #[error("plan mismatch: {0}")]
    Plan(String),

    #[error("parse error at {location}: {reason}")]
    Parse { location: String, reason: String },

    #[error("unsupported weights file version `{0}`")]
    Version(String),

    #[error("missing config field `{0}`")]
    MissingField(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn at_level(self, level: u32) -> Self {
        Error::Level {
            level,
            source: Box::new(self),
        }
    }

    /// True for errors caused by user input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Domain { .. }
            | Error::Plan(_)
            | Error::Parse { .. }
            | Error::Version(_)
            | Error::MissingField(_)
            | Error::ImportanceSamplingLevel { .. } => true,
            Error::Level { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible group elements: cannot combine {left} with {right}")]
    IncompatibleGroupElements {
        left: &'static str,
        right: &'static str,
    },

    #[error("validation failed at {field}[{index}]: {reason}")]
    Validation {
        field: &'static str,
        index: usize,
        reason: String,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: schema version {found} is not supported (expected {expected})")]
    SchemaVersion {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("deterministic-transition assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("cannot step a terminal state (t = {0})")]
    SteppedTerminal(usize),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("episode meta does not carry an initial gripper height")]
    MissingInitialHeight,

    #[error("phase boundary {h_p} is outside (0, {horizon}]")]
    PhaseOutOfRange { h_p: usize, horizon: usize },

    #[error("action {0:?} is not a member of the discrete action set")]
    NotDiscreteAction([f64; 5]),

    #[error("augmentation rejected after {attempts} attempts: {last_reason}")]
    RetriesExhausted { attempts: usize, last_reason: String },

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("training requires the discrete action space; regenerate the episodes with the discrete environment variant")]
    ContinuousActions,

    #[error("horizon {horizon} exceeds H_max {h_max}")]
    HorizonExceeded { horizon: usize, h_max: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn validation(field: &'static str, index: usize, reason: impl Into<String>) -> Self {
        Error::Validation {
            field,
            index,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

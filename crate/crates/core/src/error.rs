use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("{what}: expected dimension {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite state produced at step {step}")]
    NonFinite { step: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("initial state is outside the safe set (g = {margin})")]
    UnsafeInitialState { margin: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sampling exhausted: found {found} of {wanted} states in {set} after {attempts} attempts")]
    SamplingExhausted {
        set: &'static str,
        wanted: usize,
        found: usize,
        attempts: usize,
    },
    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

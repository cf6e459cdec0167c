use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("cannot step a terminal state")]
    TerminalState,
    #[error("episode is over; call reset first")]
    EpisodeOver,
    #[error("invalid environment parameter {name} = {value}")]
    InvalidParam { name: &'static str, value: f64 },
}

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("architecture needs at least 2 layers with positive widths, got {0:?}")]
    BadArchitecture(Vec<usize>),
    #[error("parameter vector has length {got}, architecture needs {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("input has width {got}, network expects {expected}")]
    InputWidth { expected: usize, got: usize },
    #[error("loss is not finite ({0})")]
    NonFiniteLoss(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum TrustRegionError {
    #[error("old policy assigns probability {prob:e} to a sampled action (sample {index})")]
    DegenerateOldPolicy { index: usize, prob: f64 },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch columns disagree in length")]
    RaggedBatch,
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("insufficient data: buffer holds {available}, batch needs {requested}")]
    InsufficientData { available: usize, requested: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum TabularError {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("linear system is singular")]
    Singular,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
}

impl ConfigError {
    pub fn invalid(key: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}

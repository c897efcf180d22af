use std::io;

use thiserror::Error;

/// Errors produced anywhere in the signal chain, estimators, controller,
/// plant or experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid band: {0}")]
    InvalidBand(String),
    #[error("filter order must be a positive even number, got {0}")]
    OddOrder(usize),
    #[error("invalid notch base frequency {0} Hz")]
    InvalidBase(f64),
    #[error("channel count mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("invalid normalization scale: {0}")]
    InvalidScale(String),
    #[error("timestamps must be strictly increasing (t={0})")]
    NonMonotonicTime(f64),

    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("dataset is empty or too small: {0}")]
    EmptyDataset(String),
    #[error("model has not been trained")]
    Untrained,
    #[error("wrong sequence length: expected {expected}, got {got}")]
    SequenceLength { expected: usize, got: usize },
    #[error("cache does not match the model it is used with")]
    StaleCache,
    #[error("series length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("actual series is constant; R-squared is undefined")]
    ConstantSeries,

    #[error("degenerate calibration sampling: {0}")]
    DegenerateSampling(String),
    #[error("empty grid")]
    EmptyGrid,
    #[error("negative force {0} N")]
    NegativeForce(f64),
    #[error("velocity command {command} exceeds actuator limit {limit}")]
    OverSpeed { command: f64, limit: f64 },

    #[error("value {value} outside [{low}, {high}]")]
    OutOfRange { value: f64, low: f64, high: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing model: {0}")]
    MissingModel(String),
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FalnetError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FalnetError {
    #[error("malformed CSV header: {0}")]
    MalformedHeader(String),

    #[error("line {line}: {message}")]
    MalformedRow { line: usize, message: String },

    #[error("timestamps must be strictly increasing (line {line})")]
    NonMonotonicTime { line: usize },

    #[error("no data rows")]
    NoData,

    #[error("channel `{0}` has fewer than two observed values")]
    ChannelMissing(String),

    #[error("channel `{0}` is degenerate (max == min)")]
    DegenerateChannel(String),

    #[error("series of length {len} is too short (need at least {needed})")]
    InsufficientHistory { len: usize, needed: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("spectrum is not conjugate-symmetric (max deviation {0:e})")]
    NonRealSignal(f64),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown channel `{0}`")]
    UnknownChannel(String),

    #[error("target series has zero variance; R² is undefined")]
    ConstantTarget,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for FalnetError {
    fn from(e: std::io::Error) -> Self {
        FalnetError::Io(e.to_string())
    }
}

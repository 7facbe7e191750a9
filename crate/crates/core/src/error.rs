use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("matrix is singular")]
    Singular,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("signal has {len} samples, need at least {needed}")]
    SignalTooShort { len: usize, needed: usize },
    #[error("demixing matrix is singular at frequency bin {bin}")]
    SingularDemixer { bin: usize },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("{n} sources exceeds the exhaustive permutation limit of {limit}")]
    FactorialBlowup { n: usize, limit: usize },
    #[error("reference signal is all zero")]
    DegenerateReference,
    #[error("dry source {0} has zero power")]
    SilentSource(usize),
    #[error("source {source_index} and microphone {mic} are closer than 1 cm")]
    CoincidentPositions { source_index: usize, mic: usize },
    #[error("scaling grid needs at least {needed} points, got {got}")]
    InsufficientGrid { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed model container: {0}")]
    Container(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

use thiserror::Error;

/// Errors produced anywhere in the picker.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("malformed row {line}: {msg}")]
    MalformedRow { line: usize, msg: String },
    #[error("channel length mismatch: e={e}, n={n}, z={z}")]
    ChannelLengthMismatch { e: usize, n: usize, z: usize },
    #[error("non-monotonic time: {0}")]
    NonMonotonicTime(String),
    #[error("unsupported sample rate: {0} Hz")]
    UnsupportedSampleRate(f64),
    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),
    #[error("duplicate entry: {0}")]
    Duplicate(String),
    #[error("unknown station: {0}")]
    UnknownStation(String),
    #[error("invalid station: {0}")]
    InvalidStation(String),
    #[error("stage cannot move backwards from {from:?} to {to:?}")]
    StageRegression {
        from: crate::waveform::Stage,
        to: crate::waveform::Stage,
    },

    #[error("invalid bandpass spec: {0}")]
    InvalidBand(String),
    #[error("empty window")]
    EmptyWindow,
    #[error("zero variance window")]
    ZeroVariance,
    #[error("all-zero reference window")]
    ZeroEnergy,
    #[error("window does not span the required range: {0}")]
    WindowSpan(String),
    #[error("degenerate polarization input (zero total variance)")]
    DegeneratePolarization,
    #[error("trace too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("insufficient coverage: {0}")]
    InsufficientCoverage(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature names do not match the model bundle: {0}")]
    FeatureMismatch(String),
    #[error("unsupported bundle format version {0}")]
    BundleVersion(u32),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

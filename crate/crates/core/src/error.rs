use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("length mismatch: input {index} has length {found}, expected {expected}")]
    LengthMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },

    #[error("rank error: expected rank {expected}, found rank {found}")]
    Rank { expected: usize, found: usize },

    #[error("channel mismatch: layer expects {expected} input channels, got {found}")]
    ChannelMismatch { expected: usize, found: usize },

    #[error("input too short: length {len} is below the minimum admissible length {min}")]
    InputTooShort { len: usize, min: usize },

    #[error("invalid model configuration at {layer}: {reason}")]
    Config { layer: String, reason: String },

    #[error("uninitialized running statistics in {0}")]
    UninitializedRunningStats(String),

    #[error("tape/model mismatch: {0}")]
    TapeMismatch(String),

    #[error("not a checkpoint (bad magic bytes)")]
    NotACheckpoint,

    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("truncated checkpoint: {0}")]
    TruncatedCheckpoint(String),

    #[error("unsupported encoding: WAV format tag {0:#06x}")]
    UnsupportedEncoding(u16),

    #[error("WAV parse error at byte {offset}: {reason}")]
    WavParse { offset: usize, reason: String },

    #[error("non-finite value in {tensor}")]
    NonFinite { tensor: String },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

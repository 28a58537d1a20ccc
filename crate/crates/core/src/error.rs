use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("block size {have} bits is below the {bound} bound of {need} bits")]
    BlockTooSmall {
        bound: &'static str,
        have: u64,
        need: u64,
    },
    #[error("bad parameter `{field}`: {reason}")]
    BadParameter { field: &'static str, reason: String },
    #[error("counter {value} does not fit in {width} bits")]
    CounterOverflow { value: u64, width: u32 },
    #[error("malformed header encoding")]
    BadHeader,
    #[error("ciphertext failed authentication")]
    AuthFailure,
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: u64, len: u64 },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("duplicate tag in build input")]
    DuplicateTag,
    #[error("hash table build failed after {attempts} attempts")]
    BuildFailure { attempts: u32 },
    #[error("replicas disagree")]
    ReplicaMismatch,
    #[error("tagged record matches no slot")]
    TagMismatch,
    #[error("reshuffle process for level {level} still live when a new one was due")]
    OverlapViolation { level: usize },
    #[error("address {0} not found in any level")]
    InternalNotFound(u64),
    #[error("integrity failure: {0}")]
    IntegrityFailure(String),
    #[error("transcript shape mismatch at server {server}, entry {index}")]
    ShapeMismatch { server: usize, index: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn bad(field: &'static str, reason: impl Into<String>) -> Self {
        Error::BadParameter {
            field,
            reason: reason.into(),
        }
    }
}

use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("storage spec unusable at {path}: {source}")]
    SpecUnusable { path: PathBuf, source: io::Error },

    #[error("region {region} has capacity {found}, expected {expected}")]
    CapacityMismatch { region: u32, expected: u64, found: u64 },

    #[error("range [{offset}, {offset}+{len}) exceeds region capacity {capacity}")]
    OutOfBounds { offset: u64, len: u64, capacity: u64 },

    #[error("I/O failure: {0}")]
    Io(#[from] io::Error),

    #[error("keys must be at least one byte long")]
    EmptyKey,

    #[error("key of {0} bytes exceeds the record format limit")]
    KeyTooLarge(usize),

    #[error("value of {0} bytes exceeds the record format limit")]
    ValueTooLarge(usize),

    #[error("corrupt record at offset {offset}: {reason}")]
    CorruptRecord { offset: u64, reason: &'static str },

    #[error("offset {offset} is not a record boundary in slot {slot}")]
    BadAddress { slot: u32, offset: u64 },

    #[error("strand at slot {slot} is full")]
    StrandFull { slot: u32 },

    #[error("key not found")]
    KeyNotFound,

    #[error("no neighbouring key")]
    Exhausted,

    #[error("index is empty")]
    EmptyIndex,

    #[error("corrupt index snapshot: {0}")]
    CorruptSnapshot(&'static str),

    #[error("corrupt store: {0}")]
    CorruptStore(String),

    #[error("store is named {found:?}, not {expected:?}")]
    NameMismatch { expected: String, found: String },

    #[error("configuration does not match manifest: {0}")]
    ConfigMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("handle is closed or no longer valid")]
    InvalidHandle,

    #[error("replace of a missing key")]
    ReplaceMissing,

    #[error("delete of a missing key")]
    DeleteMissing,

    #[error("no spare strand is available")]
    SpareBusy,

    #[error("nested transactions are disabled")]
    NestedTransaction,

    #[error("workload phase out of order: {0}")]
    PhaseOrderViolation(String),

    #[error("value verification failed: {0}")]
    VerificationFailed(String),

    #[error("no latency samples")]
    EmptySamples,
}

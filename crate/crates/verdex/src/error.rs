use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("element version v{version} exceeds interval end v{w_hi}")]
    VersionBeyondInterval { version: u64, w_hi: u64 },

    #[error("element (key {key}, v{version}) is dead over the whole interval [v{w_lo}, v{w_hi}]")]
    DeadElement { key: u64, version: u64, w_lo: u64, w_hi: u64 },

    #[error("density of an empty array is undefined")]
    EmptyDensity,

    #[error("version v{v} outside interval [v{w_lo}, v{w_hi}]")]
    VersionOutsideInterval { v: u64, w_lo: u64, w_hi: u64 },

    #[error("query version v{v} beyond latest version v{latest}")]
    VersionBeyondLatest { v: u64, latest: u64 },

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("bad config: {0}")]
    Config(String),

    #[error("bad snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

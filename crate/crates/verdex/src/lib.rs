//! A partially persistent, write-optimized versioned index.
//!
//! Every update creates a new version; any historical version stays
//! queryable forever. Elements live in immutable sorted arrays organized in
//! levels of geometrically growing capacity: updates enter at level 0 and
//! migrate upward through merges and promotions, so update cost stays
//! amortized-cheap while a range query scans at most one array per level.
//!
//! All device traffic flows through a simulated block store ([`iomodel`])
//! that counts block transfers per restructuring phase; the engine itself
//! never reads the block or cache size, so its layout decisions are
//! cache-oblivious.

pub mod config;
pub mod element;
pub mod engine;
pub mod error;
pub mod iomodel;
pub mod oracle;
pub mod bench;
pub mod query;
pub mod snapshot;
pub mod varray;
pub mod workload;

pub use bench::{run_workload, verify_workload, CheckpointRow, MetricsReport, VerifyOutcome};
pub use config::{EngineConfig, QueryMode};
pub use element::{Element, Key, Payload, Version, PAYLOAD_LEN};
pub use engine::{ArrayId, Engine, EngineStats};
pub use error::{Error, Result};
pub use iomodel::{IoReport, Phase};
pub use oracle::OracleLog;
pub use query::{QueryResult, QueryStats};
pub use varray::VersionedArray;
pub use workload::{KeyDist, WorkloadSpec};

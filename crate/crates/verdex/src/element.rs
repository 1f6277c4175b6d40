//! Keys, versions and the (key, version, payload) element triple.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

/// Totally-ordered key. Fixed to a 64-bit integer so block arithmetic in the
/// IO model is exact.
pub type Key = u64;

/// Payload width in bytes. Fixed so records have a constant width.
pub const PAYLOAD_LEN: usize = 16;

pub type Payload = [u8; PAYLOAD_LEN];

/// A version id. Version 0 is the empty root; ids are assigned consecutively
/// starting at 1 for the first update. The version tree is a path, so
/// ancestorship is integer comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Version(pub u64);

impl Version {
    pub const ROOT: Version = Version(0);

    /// `self` is an ancestor of (or equal to) `other`.
    #[inline]
    pub fn is_ancestor_of(self, other: Version) -> bool {
        self.0 <= other.0
    }
}

impl std::fmt::Display for Version {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// One stored element. A `None` payload is a tombstone: deletes are inserts
/// of a null value, filtered only at query output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Element {
    pub key: Key,
    pub version: Version,
    pub payload: Option<Payload>,
}

impl Element {
    pub fn new(key: Key, version: u64, payload: Option<Payload>) -> Self {
        Element { key, version: Version(version), payload }
    }

    pub fn is_tombstone(&self) -> bool {
        self.payload.is_none()
    }

    /// Array order: key ascending, then version descending. With a path
    /// version tree, descending id is descending DFS number.
    #[inline]
    pub fn cmp_slot(&self, other: &Element) -> Ordering {
        self.key
            .cmp(&other.key)
            .then_with(|| other.version.cmp(&self.version))
    }
}

//! Brute-force reference: replay the raw update log to materialize the
//! dictionary visible at any version. Ground truth for every equivalence
//! test. O(N) per query by design; never measured by the IO model.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::element::{Element, Key, Payload, Version};
use crate::error::{Error, Result};
use crate::varray::VersionedArray;

/// Append-only update log. The version of an update is its 1-based position.
#[derive(Debug, Clone, Default)]
pub struct OracleLog {
    updates: Vec<(Key, Option<Payload>)>,
}

impl OracleLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record an update; returns the version it creates.
    pub fn push(&mut self, key: Key, payload: Option<Payload>) -> Version {
        self.updates.push((key, payload));
        Version(self.updates.len() as u64)
    }

    pub fn len(&self) -> usize {
        self.updates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.updates.is_empty()
    }

    pub fn latest(&self) -> Version {
        Version(self.updates.len() as u64)
    }

    pub fn updates(&self) -> impl Iterator<Item = (Key, Version, Option<Payload>)> + '_ {
        self.updates
            .iter()
            .enumerate()
            .map(|(i, &(k, p))| (k, Version(i as u64 + 1), p))
    }

    /// The dictionary D_v: per key, the entry with the maximal version <= v,
    /// tombstoned keys excluded.
    pub fn materialize(&self, v: Version) -> Result<BTreeMap<Key, Element>> {
        if v.0 as usize > self.updates.len() {
            return Err(Error::VersionBeyondLatest { v: v.0, latest: self.updates.len() as u64 });
        }
        let mut dict: BTreeMap<Key, Element> = BTreeMap::new();
        for (i, &(key, payload)) in self.updates.iter().take(v.0 as usize).enumerate() {
            dict.insert(key, Element::new(key, i as u64 + 1, payload));
        }
        dict.retain(|_, e| !e.is_tombstone());
        Ok(dict)
    }

    /// query_v(k1, k2) per the reference semantics.
    pub fn query(&self, v: Version, k1: Key, k2: Key) -> Result<Vec<Element>> {
        let dict = self.materialize(v)?;
        Ok(dict.range(k1..=k2).map(|(_, e)| *e).collect())
    }

    /// N_v: number of live, non-tombstoned keys at v.
    pub fn n_v(&self, v: Version) -> Result<usize> {
        Ok(self.materialize(v)?.len())
    }

    /// Independent quadratic recomputation of an array-local live count.
    pub fn live_check(array: &VersionedArray, w: Version) -> usize {
        let elems = array.elems();
        elems
            .iter()
            .filter(|e| {
                e.version.0 <= w.0
                    && !elems.iter().any(|o| {
                        o.key == e.key && o.version.0 > e.version.0 && o.version.0 <= w.0
                    })
            })
            .count()
    }

    /// Newline-delimited text form: `put <key> <payload-hex>` / `del <key>`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        for &(key, payload) in &self.updates {
            match payload {
                Some(p) => writeln!(f, "put {} {}", key, hex(&p))?,
                None => writeln!(f, "del {}", key)?,
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<OracleLog> {
        let f = std::fs::File::open(path)?;
        let mut log = OracleLog::new();
        for (lineno, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let op = parts.next();
            let key = parts
                .next()
                .and_then(|s| s.parse::<Key>().ok())
                .ok_or_else(|| Error::Snapshot(format!("bad log line {}", lineno + 1)))?;
            match op {
                Some("put") => {
                    let p = parts
                        .next()
                        .and_then(unhex)
                        .ok_or_else(|| Error::Snapshot(format!("bad payload, line {}", lineno + 1)))?;
                    log.push(key, Some(p));
                }
                Some("del") => {
                    log.push(key, None);
                }
                _ => return Err(Error::Snapshot(format!("bad op, line {}", lineno + 1))),
            }
        }
        Ok(log)
    }
}

fn hex(p: &Payload) -> String {
    p.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<Payload> {
    if s.len() != 32 {
        return None;
    }
    let mut p = [0u8; 16];
    for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
        let hi = (chunk[0] as char).to_digit(16)?;
        let lo = (chunk[1] as char).to_digit(16)?;
        p[i] = (hi * 16 + lo) as u8;
    }
    Some(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abba_log() -> OracleLog {
        // v1: a, v2: b, v3: a
        let mut log = OracleLog::new();
        log.push(1, Some([1; 16]));
        log.push(2, Some([2; 16]));
        log.push(1, Some([3; 16]));
        log
    }

    #[test]
    fn query_replays_exactly() {
        let log = abba_log();
        let r = log.query(Version(2), 1, 2).unwrap();
        let kv: Vec<(Key, u64)> = r.iter().map(|e| (e.key, e.version.0)).collect();
        assert_eq!(kv, vec![(1, 1), (2, 2)]);
        assert!(log.query(Version(0), 1, 2).unwrap().is_empty());
    }

    #[test]
    fn query_respects_tombstones() {
        let mut log = abba_log();
        log.push(1, None); // tombstone a at v4
        assert!(log.query(Version(4), 1, 1).unwrap().is_empty());
        assert_eq!(log.query(Version(3), 1, 1).unwrap().len(), 1);
    }

    #[test]
    fn n_v_counts_live_keys() {
        let log = abba_log();
        assert_eq!(log.n_v(Version(1)).unwrap(), 1);
        assert_eq!(log.n_v(Version(2)).unwrap(), 2);
        assert_eq!(log.n_v(Version(3)).unwrap(), 2);
        assert_eq!(OracleLog::new().n_v(Version(0)).unwrap(), 0);
        let mut one = OracleLog::new();
        one.push(7, Some([0; 16]));
        one.push(7, None);
        assert_eq!(one.n_v(Version(2)).unwrap(), 0);
    }

    #[test]
    fn query_beyond_latest_errors() {
        assert!(abba_log().query(Version(9), 1, 2).is_err());
    }

    #[test]
    fn live_check_reproduces_e1() {
        let arr = VersionedArray::build(
            vec![
                Element::new(1, 3, Some([3; 16])),
                Element::new(1, 1, Some([1; 16])),
                Element::new(2, 2, Some([2; 16])),
            ],
            Version(1),
            Version(3),
            0,
        )
        .unwrap();
        assert_eq!(OracleLog::live_check(&arr, Version(1)), 1);
        assert_eq!(OracleLog::live_check(&arr, Version(2)), 2);
        assert_eq!(OracleLog::live_check(&arr, Version(3)), 2);
        let empty = VersionedArray::build(vec![], Version(1), Version(1), 0).unwrap();
        assert_eq!(OracleLog::live_check(&empty, Version(1)), 0);
        let single =
            VersionedArray::build(vec![Element::new(5, 1, Some([0; 16]))], Version(1), Version(1), 0)
                .unwrap();
        assert_eq!(OracleLog::live_check(&single, Version(1)), 1);
    }

    #[test]
    fn append_never_changes_old_answers() {
        let mut log = abba_log();
        let before = log.query(Version(2), 0, 10).unwrap();
        log.push(1, None);
        log.push(9, Some([9; 16]));
        assert_eq!(log.query(Version(2), 0, 10).unwrap(), before);
    }

    #[test]
    fn save_load_roundtrip() {
        let mut log = abba_log();
        log.push(4, None);
        let dir = std::env::temp_dir().join("verdex-oracle-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("log.txt");
        log.save(&path).unwrap();
        let loaded = OracleLog::load(&path).unwrap();
        assert_eq!(loaded.len(), log.len());
        assert_eq!(
            loaded.query(Version(4), 0, 10).unwrap(),
            log.query(Version(4), 0, 10).unwrap()
        );
    }
}

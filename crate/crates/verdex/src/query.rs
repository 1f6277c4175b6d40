//! Versioned range queries: one sorted scan per level, streamed through a
//! k-way merge that keeps the closest-ancestor entry per key.
//!
//! Array lookup depends on the configured mode: AUX_INDEX probes a per-level
//! interval index, SUCC_POINTERS finds the level-0 record containing the
//! query version and follows successor edges upward.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::config::QueryMode;
use crate::element::{Element, Key, Version};
use crate::engine::{ArrayId, Engine};
use crate::error::{Error, Result};
use crate::iomodel::{decode_element, BlockStore, Phase};

/// Per-level scan costs for one query.
#[derive(Debug, Clone, Serialize)]
pub struct LevelScan {
    pub level: u32,
    pub array: ArrayId,
    /// Elements with key in [k1, k2] inspected during the scan.
    pub examined: usize,
    /// Binary-search probes locating the scan start.
    pub bsearch_probes: usize,
    /// Device blocks spanned by the examined region.
    pub blocks: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct QueryStats {
    pub scans: Vec<LevelScan>,
    /// Arrays scanned (at most one per level).
    pub levels_visited: usize,
    /// Total elements examined across levels.
    pub examined_total: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryResult {
    /// Key-sorted entries visible at the query version; tombstoned keys
    /// are absent.
    pub entries: Vec<Element>,
    pub stats: QueryStats,
}

/// A sorted cursor over one array's extent. Every element inspected goes
/// through the block store so transfers are charged faithfully; the decoded
/// record is cross-checked against the in-memory array in debug builds.
struct ScanCursor<'a> {
    engine: &'a Engine,
    store: &'a RefCell<BlockStore>,
    id: ArrayId,
    level: u32,
    pos: usize,
    len: usize,
    start_pos: usize,
    end_pos: usize,
    k2: Key,
    scan_v: Version,
    examined: usize,
    bsearch_probes: usize,
    cur_key: Option<Key>,
    emitted_cur: bool,
}

impl<'a> ScanCursor<'a> {
    fn new(engine: &'a Engine, id: ArrayId, k1: Key, k2: Key, v: Version) -> ScanCursor<'a> {
        let rec = engine.record(id).expect("cursor over unknown array");
        let len = rec.array.len();
        // Scans never look past the array's own interval.
        let scan_v = Version(v.0.min(rec.w_hi().0));
        let mut cur = ScanCursor {
            engine,
            store: &engine.store,
            id,
            level: rec.level,
            pos: 0,
            len,
            start_pos: 0,
            end_pos: 0,
            k2,
            scan_v,
            examined: 0,
            bsearch_probes: 0,
            cur_key: None,
            emitted_cur: false,
        };
        // Binary search for the first element with key >= k1, probing the
        // device for each midpoint.
        let (mut lo, mut hi) = (0usize, len);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            let e = cur.read_at(mid);
            cur.bsearch_probes += 1;
            if e.key < k1 {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        cur.pos = lo;
        cur.start_pos = lo;
        cur.end_pos = lo;
        cur
    }

    fn read_at(&self, i: usize) -> Element {
        let rec = self.engine.record(self.id).unwrap();
        let ext = rec.extent.expect("live array without extent");
        let raw = self.store.borrow_mut().read_record(ext, i);
        let e = decode_element(&raw);
        debug_assert_eq!(e, rec.array.elems()[i]);
        e
    }

    /// Next visible entry: per key, the first (largest-version) element with
    /// version <= scan_v. Tombstones are reported; the merge decides.
    fn next(&mut self) -> Option<Element> {
        while self.pos < self.len {
            let e = self.read_at(self.pos);
            self.pos += 1;
            if e.key > self.k2 {
                self.pos = self.len;
                return None;
            }
            self.examined += 1;
            self.end_pos = self.pos;
            if self.cur_key != Some(e.key) {
                self.cur_key = Some(e.key);
                self.emitted_cur = false;
            }
            if !self.emitted_cur && e.version <= self.scan_v {
                self.emitted_cur = true;
                return Some(e);
            }
        }
        None
    }

    fn finish(&self) -> LevelScan {
        let rec = self.engine.record(self.id).unwrap();
        let blocks = if self.end_pos > self.start_pos {
            self.store.borrow().span_blocks(
                rec.extent.unwrap(),
                self.start_pos,
                self.end_pos - self.start_pos,
            )
        } else {
            0
        };
        LevelScan {
            level: self.level,
            array: self.id,
            examined: self.examined,
            bsearch_probes: self.bsearch_probes,
            blocks,
        }
    }
}

/// Heap entry ordered so the k-way merge pops (key asc, version desc,
/// level asc): the first pop per key is the closest ancestor, lowest level
/// winning ties.
struct HeapItem {
    elem: Element,
    level: u32,
    cursor: usize,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want the smallest first.
        (other.elem.key, self.elem.version.0, other.level)
            .cmp(&(self.elem.key, other.elem.version.0, self.level))
    }
}

impl Engine {
    /// All keys in [k1, k2] visible at version v, with their payloads as of
    /// the latest ancestor version.
    pub fn range_query(&self, v: Version, k1: Key, k2: Key) -> Result<QueryResult> {
        if v.0 == 0 || v > self.latest_version() {
            return Err(Error::VersionBeyondLatest {
                v: v.0,
                latest: self.latest_version().0,
            });
        }
        if k1 > k2 {
            return Ok(QueryResult {
                entries: Vec::new(),
                stats: QueryStats::default(),
            });
        }
        self.store.borrow_mut().set_phase(Phase::Query);
        let targets = match self.config().query_mode {
            QueryMode::AuxIndex => self.aux_targets(v),
            QueryMode::SuccPointers => self.succ_targets(v)?,
        };
        let mut cursors: Vec<ScanCursor<'_>> = targets
            .into_iter()
            .map(|id| ScanCursor::new(self, id, k1, k2, v))
            .collect();
        let mut heap: BinaryHeap<HeapItem> = BinaryHeap::new();
        for (i, c) in cursors.iter_mut().enumerate() {
            if let Some(e) = c.next() {
                heap.push(HeapItem {
                    elem: e,
                    level: c.level,
                    cursor: i,
                });
            }
        }
        let mut entries = Vec::new();
        let mut last_key: Option<Key> = None;
        while let Some(item) = heap.pop() {
            if last_key != Some(item.elem.key) {
                last_key = Some(item.elem.key);
                if !item.elem.is_tombstone() {
                    entries.push(item.elem);
                }
            }
            let c = &mut cursors[item.cursor];
            if let Some(e) = c.next() {
                heap.push(HeapItem {
                    elem: e,
                    level: c.level,
                    cursor: item.cursor,
                });
            }
        }
        self.store.borrow_mut().flush();
        let scans: Vec<LevelScan> = cursors.iter().map(|c| c.finish()).collect();
        let stats = QueryStats {
            levels_visited: scans.len(),
            examined_total: scans.iter().map(|s| s.examined).sum(),
            scans,
        };
        Ok(QueryResult { entries, stats })
    }

    /// The payload of `key` visible at version v, if the key exists then.
    pub fn point_query(&self, v: Version, key: Key) -> Result<Option<Element>> {
        let r = self.range_query(v, key, key)?;
        Ok(r.entries.into_iter().next())
    }

    /// AUX_INDEX: per level, the live array containing the closest covered
    /// ancestor of v (predecessor by w_lo). Each index probe costs
    /// ceil(log2(entries)) + 1 block reads.
    fn aux_targets(&self, v: Version) -> Vec<ArrayId> {
        let mut out = Vec::new();
        for level in 0..self.level_count() as u32 {
            let entries = self.index_entries(level);
            if entries == 0 {
                continue;
            }
            self.store
                .borrow_mut()
                .charge_index_probe(Phase::Query, entries);
            if let Some(id) = self.scan_target(level, v) {
                out.push(id);
            }
        }
        out
    }

    /// SUCC_POINTERS: locate the level-0 record containing v, then follow
    /// successor edges; each hop is one record read.
    fn succ_targets(&self, v: Version) -> Result<Vec<ArrayId>> {
        let entries = self.level0_record_entries();
        if entries == 0 {
            return Ok(Vec::new());
        }
        self.store
            .borrow_mut()
            .charge_index_probe(Phase::Query, entries);
        let mut cur = self.record_containing(0, v.0);
        if cur.is_none() {
            return Err(Error::Invariant(format!(
                "no level-0 record covers version {}",
                v.0
            )));
        }
        let mut out = Vec::new();
        let mut hops = 0u64;
        while let Some(id) = cur {
            let rec = self
                .record(id)
                .ok_or_else(|| Error::Invariant(format!("dangling succ edge to {id}")))?;
            if rec.is_live() {
                out.push(id);
            }
            cur = rec.succ;
            hops += 1;
            if hops > 1 + self.level_count() as u64 {
                return Err(Error::Invariant("succ chain longer than level count".into()));
            }
            if cur.is_some() {
                self.store.borrow_mut().charge_reads(Phase::Query, 1);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EngineConfig;
    use crate::oracle::OracleLog;

    fn payload(x: u8) -> [u8; 16] {
        [x; 16]
    }

    fn run(mode: QueryMode, updates: &[(Key, Option<[u8; 16]>)]) -> (Engine, OracleLog) {
        let cfg = EngineConfig {
            query_mode: mode,
            invariant_checks: true,
            ..EngineConfig::default()
        };
        let mut eng = Engine::new(cfg);
        let mut log = OracleLog::new();
        for &(k, p) in updates {
            eng.update(k, p).unwrap();
            log.push(k, p);
        }
        (eng, log)
    }

    fn check_against_oracle(eng: &Engine, log: &OracleLog, k1: Key, k2: Key) {
        for v in 1..=log.len() as u64 {
            let got = eng.range_query(Version(v), k1, k2).unwrap();
            let want = log.query(Version(v), k1, k2).unwrap();
            let got_kv: Vec<(Key, u64)> = got
                .entries
                .iter()
                .map(|e| (e.key, e.version.0))
                .collect();
            let want_kv: Vec<(Key, u64)> =
                want.iter().map(|e| (e.key, e.version.0)).collect();
            assert_eq!(got_kv, want_kv, "version {v}, mode {:?}", eng.config().query_mode);
            for (g, w) in got.entries.iter().zip(want.iter()) {
                assert_eq!(g.payload, w.payload);
            }
        }
    }

    #[test]
    fn small_trace_matches_oracle_both_modes() {
        let updates: Vec<(Key, Option<[u8; 16]>)> = vec![
            (5, Some(payload(1))),
            (3, Some(payload(2))),
            (5, Some(payload(3))),
            (8, Some(payload(4))),
            (3, None), // tombstone
            (1, Some(payload(5))),
            (5, Some(payload(6))),
            (9, Some(payload(7))),
            (3, Some(payload(8))),
            (8, None),
        ];
        for mode in [QueryMode::AuxIndex, QueryMode::SuccPointers] {
            let (eng, log) = run(mode, &updates);
            check_against_oracle(&eng, &log, 0, u64::MAX);
            check_against_oracle(&eng, &log, 3, 8);
            check_against_oracle(&eng, &log, 6, 7);
        }
    }

    #[test]
    fn tombstone_hides_key_until_reinsert() {
        let (eng, _) = run(
            QueryMode::AuxIndex,
            &[(3, Some(payload(2))), (3, None), (3, Some(payload(9)))],
        );
        assert!(eng.point_query(Version(2), 3).unwrap().is_none());
        let e = eng.point_query(Version(3), 3).unwrap().unwrap();
        assert_eq!(e.payload, Some(payload(9)));
        assert_eq!(e.version, Version(3));
    }

    #[test]
    fn historical_versions_stay_frozen() {
        let (eng, log) = run(
            QueryMode::AuxIndex,
            &(1..=40u64)
                .map(|i| (i % 7, Some(payload(i as u8))))
                .collect::<Vec<_>>(),
        );
        check_against_oracle(&eng, &log, 0, u64::MAX);
    }

    #[test]
    fn query_rejects_bad_versions() {
        let (eng, _) = run(QueryMode::AuxIndex, &[(1, Some(payload(1)))]);
        assert!(eng.range_query(Version(0), 0, 10).is_err());
        assert!(eng.range_query(Version(2), 0, 10).is_err());
    }

    #[test]
    fn at_most_one_array_scanned_per_level() {
        for mode in [QueryMode::AuxIndex, QueryMode::SuccPointers] {
            let updates: Vec<(Key, Option<[u8; 16]>)> =
                (1..=64u64).map(|i| (i * 13 % 31, Some(payload(i as u8)))).collect();
            let (eng, _) = run(mode, &updates);
            for v in [1u64, 17, 33, 64] {
                let r = eng.range_query(Version(v), 0, u64::MAX).unwrap();
                let mut levels: Vec<u32> = r.stats.scans.iter().map(|s| s.level).collect();
                let n = levels.len();
                levels.dedup();
                assert_eq!(n, levels.len(), "mode {mode:?} v {v}");
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn update_seq(max_len: usize) -> impl Strategy<Value = Vec<(Key, Option<[u8; 16]>)>> {
            proptest::collection::vec(
                (0u64..24, proptest::option::weighted(0.85, any::<u8>())),
                1..=max_len,
            )
            .prop_map(|v| {
                v.into_iter()
                    .map(|(k, p)| (k, p.map(|x| [x; 16])))
                    .collect()
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn engine_agrees_with_oracle(updates in update_seq(100)) {
                for mode in [QueryMode::AuxIndex, QueryMode::SuccPointers] {
                    let (eng, log) = run(mode, &updates);
                    eng.check_invariants().unwrap();
                    let inserted: Vec<(Key, Version)> = log
                        .updates()
                        .map(|(k, v, _)| (k, v))
                        .collect();
                    eng.verify_deep(&inserted).unwrap();
                    for v in 1..=log.len() as u64 {
                        let got = eng.range_query(Version(v), 0, u64::MAX).unwrap();
                        let want = log.query(Version(v), 0, u64::MAX).unwrap();
                        prop_assert_eq!(got.entries, want, "mode {:?} v {}", mode, v);
                        let sub = eng.range_query(Version(v), 5, 14).unwrap();
                        let want_sub = log.query(Version(v), 5, 14).unwrap();
                        prop_assert_eq!(sub.entries, want_sub);
                    }
                }
            }
        }
    }

    #[test]
    fn empty_range_returns_nothing() {
        let (eng, _) = run(QueryMode::AuxIndex, &[(10, Some(payload(1)))]);
        let r = eng.range_query(Version(1), 20, 30).unwrap();
        assert!(r.entries.is_empty());
        let r = eng.range_query(Version(1), 30, 20).unwrap();
        assert!(r.entries.is_empty());
    }
}

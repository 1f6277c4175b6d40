//! The leveled structure: update path, promotion, promotable-subarray
//! extraction, subdivision, per-level registration, auxiliary indexes and
//! successor pointers.
//!
//! Level `l` holds arrays of size at most 2^{l+1} whose live counts stay
//! at or above 2^l / 3 at every covered version; live arrays in a level carry
//! pairwise-disjoint version intervals. Updates enter as singleton arrays at
//! level 0 and cascade upward by promotion; density-deficient remainders are
//! subdivided in place.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::config::{EngineConfig, QueryMode};
use crate::element::{Element, Key, Payload, Version};
use crate::error::{Error, Result};
use crate::iomodel::{encode_element, BlockStore, ExtentId, IoReport, Phase};
use crate::varray::VersionedArray;

pub type ArrayId = u64;

/// Size bound 2^{l+1} for arrays at level l.
pub fn level_capacity(level: u32) -> u64 {
    2u64 << level
}

/// Smallest version v in the array's interval with
/// live(A, v) > 2^{l+1}/3 and |S(A, v)| > 2^{l+1}; the version closest to
/// the root whose suffix qualifies for level l+1.
pub fn promotable_version(a: &VersionedArray, level: u32) -> Option<Version> {
    if a.is_empty() {
        return None;
    }
    let cap = level_capacity(level);
    let live = a.live_counts_all();
    let suffix = a.suffix_counts_all();
    for (i, (&lv, &sf)) in live.iter().zip(suffix.iter()).enumerate() {
        if 3 * lv as u64 > cap && sf as u64 > cap {
            return Some(Version(a.w_lo.0 + i as u64));
        }
    }
    None
}

/// The promotable suffix subarray and its interval, if one exists.
pub fn extract_promotable(
    a: &VersionedArray,
    level: u32,
) -> Option<(Vec<Element>, (Version, Version))> {
    promotable_version(a, level).map(|v| (a.suffix_subarray(v), (v, a.w_hi)))
}

/// The remainder left at level l after extracting the suffix at `v`:
/// every element live somewhere in [w_lo, v-1]. None when v = w_lo
/// (the whole array was promoted).
pub fn remainder(a: &VersionedArray, v: Version) -> Option<VersionedArray> {
    if v == a.w_lo {
        return None;
    }
    Some(a.restrict(a.w_lo, Version(v.0 - 1), a.level))
}

/// Greedy bottom-up subdivision: one pass computes suffix-live counts, then
/// repeatedly the smallest w whose restricted suffix drops below 2^{l+1} is
/// chopped off the top of the remaining interval.
pub fn subdivide(a: &VersionedArray, level: u32) -> Result<Vec<VersionedArray>> {
    let cap = level_capacity(level);
    let lo0 = a.w_lo.0;
    let hi_ge = a.suffix_counts_all(); // index w - lo0: elements with live hi >= w
    let lo_ge = a.lo_at_or_after_counts(); // elements with live lo >= w
    let mut out = Vec::new();
    let mut cur_hi = a.w_hi.0;
    loop {
        // Elements already emitted with the chopped-off top (live lo > cur_hi).
        let removed = if cur_hi == a.w_hi.0 {
            0
        } else {
            lo_ge[(cur_hi + 1 - lo0) as usize]
        };
        let restricted = |w: u64| hi_ge[(w - lo0) as usize] - removed;
        if restricted(lo0) == 0 {
            return Err(Error::Invariant(
                "subdivide reached an empty emission".into(),
            ));
        }
        if lo0 == cur_hi {
            out.push(a.restrict(Version(lo0), Version(cur_hi), level));
            break;
        }
        // Walk from the child of the root upward for the first small suffix;
        // the root itself is never a cut point, so even an array smaller than
        // the level capacity splits if its first suffix already qualifies.
        // When no suffix drops strictly below the capacity, accept one that
        // hits it exactly: after promotable extraction has run, the topmost
        // suffix is always <= 2^{l+1} (anything larger would have promoted),
        // so a dense tail can pin every suffix at exactly the capacity.
        let mut cut = None;
        for w in lo0 + 1..=cur_hi {
            if (restricted(w) as u64) < cap {
                cut = Some(w);
                break;
            }
        }
        if cut.is_none() {
            for w in lo0 + 1..=cur_hi {
                if (restricted(w) as u64) == cap {
                    cut = Some(w);
                    break;
                }
            }
        }
        match cut {
            Some(w) => {
                let piece = a.restrict(Version(w), Version(cur_hi), level);
                if piece.is_empty() {
                    return Err(Error::Invariant(
                        "subdivide reached an empty emission".into(),
                    ));
                }
                out.push(piece);
                cur_hi = w - 1;
            }
            None => {
                // Every suffix stays large: emit the remaining chunk whole.
                out.push(a.restrict(Version(lo0), Version(cur_hi), level));
                break;
            }
        }
    }
    out.reverse();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Live,
    Dummy,
}

/// One registered array at some level: the array itself (element-free for
/// dummies), its device extent, and the successor edge into the next level.
#[derive(Debug, Clone)]
pub struct ArrayRecord {
    pub id: ArrayId,
    pub level: u32,
    pub status: Status,
    pub array: VersionedArray,
    pub extent: Option<ExtentId>,
    pub succ: Option<ArrayId>,
    pub preds: BTreeSet<ArrayId>,
}

impl ArrayRecord {
    pub fn w_lo(&self) -> Version {
        self.array.w_lo
    }

    pub fn w_hi(&self) -> Version {
        self.array.w_hi
    }

    pub fn is_live(&self) -> bool {
        self.status == Status::Live
    }
}

#[derive(Debug, Default)]
struct Level {
    /// w_lo -> array id, live arrays only.
    live_index: BTreeMap<u64, ArrayId>,
    /// w_lo -> array id for dummy placeholders (SUCC_POINTERS mode).
    dummy_index: BTreeMap<u64, ArrayId>,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct EngineStats {
    pub updates: u64,
    pub merges: u64,
    pub multi_merges: u64,
    pub promotions: u64,
    pub subdivisions: u64,
    /// Arrays left oversized but dense and non-promotable at their level.
    pub oversized_dense: u64,
    /// Subdivision outputs with lead fraction below 2/3, beyond the single
    /// such piece each subdivision is allowed.
    pub low_lead_pieces: u64,
    /// Promoted suffixes carrying less than (2/3)*2^{l+1} lead elements.
    pub low_lead_promotions: u64,
}

#[derive(Debug)]
pub struct Engine {
    cfg: EngineConfig,
    pub(crate) store: RefCell<BlockStore>,
    records: HashMap<ArrayId, ArrayRecord>,
    levels: Vec<Level>,
    next_id: ArrayId,
    latest: u64,
    /// Range map: segment start -> highest level holding that segment.
    /// A key `s` with value `h` means every version in `[s, next key)`
    /// has highest level `h` (`None` = resident at no level).
    highest_level: BTreeMap<u64, Option<u32>>,
    stats: EngineStats,
    pending_rewire: BTreeSet<ArrayId>,
    dirty_versions: Vec<(u64, u64)>,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Engine {
        Engine {
            cfg,
            store: RefCell::new(BlockStore::new(cfg.block_records, cfg.cache_blocks)),
            records: HashMap::new(),
            levels: Vec::new(),
            next_id: 0,
            latest: 0,
            highest_level: BTreeMap::new(),
            stats: EngineStats::default(),
            pending_rewire: BTreeSet::new(),
            dirty_versions: Vec::new(),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn latest_version(&self) -> Version {
        Version(self.latest)
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn io_report(&self) -> IoReport {
        self.store.borrow().snapshot_report()
    }

    pub fn reset_io(&self) {
        self.store.borrow_mut().reset_counters();
    }

    pub fn record(&self, id: ArrayId) -> Option<&ArrayRecord> {
        self.records.get(&id)
    }

    pub fn records(&self) -> impl Iterator<Item = &ArrayRecord> {
        self.records.values()
    }

    /// Sum of |A| over live arrays: the structure's element footprint.
    pub fn total_live_elements(&self) -> u64 {
        self.records
            .values()
            .filter(|r| r.is_live())
            .map(|r| r.array.len() as u64)
            .sum()
    }

    // ---- update path ----

    /// Create version latest+1 holding `key -> payload` (None = tombstone)
    /// and restructure. Returns the new version.
    pub fn update(&mut self, key: Key, payload: Option<Payload>) -> Result<Version> {
        let v = self.latest + 1;
        self.latest = v;
        self.stats.updates += 1;
        self.store.borrow_mut().set_phase(Phase::Update);
        let singleton = VersionedArray::build(
            vec![Element::new(key, v, payload)],
            Version(v),
            Version(v),
            0,
        )?;
        self.promote_into(singleton, 0, true)?;
        self.process_rewires();
        self.recompute_highest();
        self.store.borrow_mut().flush();
        Ok(Version(v))
    }

    fn ensure_level(&mut self, level: u32) {
        while self.levels.len() <= level as usize {
            self.levels.push(Level::default());
        }
    }

    /// Promote an array into `level`: merge with its target(s), extract
    /// promotable suffixes until none remain, subdivide if the remainder is
    /// sparse, register the results, recurse for each promoted suffix.
    fn promote_into(&mut self, arr: VersionedArray, level: u32, entry: bool) -> Result<()> {
        self.ensure_level(level);
        debug_assert!(!arr.is_empty());
        let targets = self.merge_targets(level, &arr);
        let mut cur = arr;
        cur.level = level;
        let did_merge = !targets.is_empty();
        if did_merge {
            self.store.borrow_mut().set_phase(Phase::Merge);
            if targets.len() > 1 {
                self.stats.multi_merges += 1;
            }
            for tid in targets {
                let rec = self.unregister_live(tid);
                if let Some(ext) = rec.extent {
                    let len = rec.array.len();
                    self.store.borrow_mut().read_seq(ext, 0, len);
                }
                cur = VersionedArray::merge(&rec.array, &cur, level);
                self.stats.merges += 1;
            }
        }
        // Extract promotable suffixes until none remain. When the array fits
        // its level no suffix can qualify, so this loop is exactly "while
        // oversized and promotable".
        let cap = level_capacity(level);
        let mut subs: Vec<VersionedArray> = Vec::new();
        let mut rest = Some(cur);
        while let Some(a) = rest.as_ref() {
            let Some(v) = promotable_version(a, level) else {
                break;
            };
            let ex = a.restrict(v, a.w_hi, level + 1);
            self.note_promotion(&ex, level)?;
            let rem = remainder(a, v);
            subs.push(ex);
            rest = rem;
        }
        if let Some(a) = rest.as_ref() {
            if a.len() as u64 > cap {
                self.stats.oversized_dense += 1;
            }
        }
        // Density repair.
        let mut reg_phase = if did_merge || !subs.is_empty() {
            Phase::Merge
        } else if entry {
            Phase::Update
        } else {
            Phase::Merge
        };
        let pieces: Vec<VersionedArray> = match rest {
            None => Vec::new(),
            Some(a) => {
                let min_live = *a.live_counts_all().iter().min().unwrap() as u64;
                if 6 * min_live < a.len() as u64 {
                    reg_phase = Phase::Subdivide;
                    let ps = subdivide(&a, level)?;
                    self.note_subdivision(&ps, level)?;
                    self.stats.subdivisions += 1;
                    ps
                } else {
                    vec![a]
                }
            }
        };
        let mut new_ids = Vec::new();
        let mut boundaries = Vec::new();
        for p in pieces {
            boundaries.push(p.w_lo.0);
            new_ids.push(self.register_live(p, level, reg_phase)?);
        }
        let mut dummy_ids = Vec::new();
        if self.cfg.query_mode == QueryMode::SuccPointers {
            for s in &subs {
                boundaries.push(s.w_lo.0);
                dummy_ids.push(self.register_dummy(s.w_lo, s.w_hi, level));
            }
            for b in boundaries {
                self.propagate_boundary(level, b);
            }
        }
        for s in std::mem::take(&mut subs) {
            self.promote_into(s, level + 1, false)?;
        }
        if self.cfg.query_mode == QueryMode::SuccPointers {
            for id in new_ids.into_iter().chain(dummy_ids) {
                if self.records.contains_key(&id) {
                    self.rewire(id);
                }
            }
        }
        Ok(())
    }

    /// Which live arrays at `level` the incoming array merges with. The seed
    /// is the array holding the closest ancestor of min(W): in AUX_INDEX mode
    /// the predecessor by w_lo, in SUCC_POINTERS mode the array containing
    /// floor(W) (previous version for level-0 entries). The floor rule
    /// matters for chain routing: it refuses to merge across versions whose
    /// data resides at other levels, which the predecessor rule would happily
    /// span. Any further live arrays overlapped by the merged span are
    /// absorbed so intervals stay disjoint within the level.
    fn merge_targets(&self, level: u32, arr: &VersionedArray) -> Vec<ArrayId> {
        let lvl = &self.levels[level as usize];
        let seed: Option<ArrayId> = match self.cfg.query_mode {
            QueryMode::AuxIndex => lvl
                .live_index
                .range(..=arr.w_lo.0)
                .next_back()
                .map(|(_, &id)| id),
            QueryMode::SuccPointers => {
                // floor of the incoming interval: its own versions count as
                // resident at the source level while in transit, so the walk
                // starts strictly below min(W). For level-0 entries this
                // degenerates to the previous version.
                let anchor = if arr.w_lo.0 > 1 {
                    self.floor_uncovered_below(level, arr.w_lo.0 - 1)
                } else {
                    None
                };
                anchor.and_then(|u| self.live_containing(level, u))
            }
        };
        let mut out = Vec::new();
        let (span_lo, span_hi) = match seed {
            Some(id) => {
                out.push(id);
                let rec = &self.records[&id];
                (
                    rec.w_lo().0.min(arr.w_lo.0),
                    rec.w_hi().0.max(arr.w_hi.0),
                )
            }
            None => (arr.w_lo.0, arr.w_hi.0),
        };
        if span_lo < span_hi {
            for (_, &id) in lvl.live_index.range(span_lo + 1..=span_hi) {
                if Some(id) != seed {
                    out.push(id);
                }
            }
        }
        out
    }

    /// floor_{level-1}(W): the largest version u <= root with no live array
    /// covering u at any level below `level`. None when the walk exhausts the
    /// version line.
    fn floor_uncovered_below(&self, level: u32, root: u64) -> Option<u64> {
        let mut u = root;
        'walk: while u >= 1 {
            for l in 0..level {
                if let Some(id) = self.live_containing(l, u) {
                    let w_lo = self.records[&id].w_lo().0;
                    u = w_lo - 1;
                    continue 'walk;
                }
            }
            return Some(u);
        }
        None
    }

    fn live_containing(&self, level: u32, u: u64) -> Option<ArrayId> {
        let lvl = self.levels.get(level as usize)?;
        let (_, &id) = lvl.live_index.range(..=u).next_back()?;
        (self.records[&id].w_hi().0 >= u).then_some(id)
    }

    /// The record (live preferred, else dummy) at `level` containing `u`.
    pub(crate) fn record_containing(&self, level: u32, u: u64) -> Option<ArrayId> {
        if let Some(id) = self.live_containing(level, u) {
            return Some(id);
        }
        let lvl = self.levels.get(level as usize)?;
        let (_, &id) = lvl.dummy_index.range(..=u).next_back()?;
        (self.records[&id].w_hi().0 >= u).then_some(id)
    }

    fn register_live(
        &mut self,
        arr: VersionedArray,
        level: u32,
        phase: Phase,
    ) -> Result<ArrayId> {
        debug_assert!(!arr.is_empty());
        self.ensure_level(level);
        if self.cfg.invariant_checks {
            self.check_level_constraints(&arr, level)?;
        }
        let id = self.next_id;
        self.next_id += 1;
        let recs: Vec<_> = arr.elems().iter().map(encode_element).collect();
        let ext = {
            let mut st = self.store.borrow_mut();
            st.set_phase(phase);
            let ext = st.alloc_extent(recs.len());
            st.write_seq(ext, 0, &recs);
            ext
        };
        let lvl = &mut self.levels[level as usize];
        let prev = lvl.live_index.insert(arr.w_lo.0, id);
        assert!(
            prev.is_none(),
            "live index collision at level {level}, w_lo {}",
            arr.w_lo.0
        );
        let idx_len = lvl.live_index.len() as u64;
        self.mark_dirty(arr.w_lo.0, arr.w_hi.0);
        self.store
            .borrow_mut()
            .charge_aux_entries(Phase::Aux, 1, idx_len);
        self.records.insert(
            id,
            ArrayRecord {
                id,
                level,
                status: Status::Live,
                array: arr,
                extent: Some(ext),
                succ: None,
                preds: BTreeSet::new(),
            },
        );
        Ok(id)
    }

    fn unregister_live(&mut self, id: ArrayId) -> ArrayRecord {
        let rec = self.records.remove(&id).expect("unregistering unknown array");
        debug_assert!(rec.is_live());
        let lvl = &mut self.levels[rec.level as usize];
        let removed = lvl.live_index.remove(&rec.w_lo().0);
        debug_assert_eq!(removed, Some(id));
        let idx_len = lvl.live_index.len() as u64;
        self.mark_dirty(rec.w_lo().0, rec.w_hi().0);
        self.store
            .borrow_mut()
            .charge_aux_entries(Phase::Aux, 1, idx_len.max(1));
        if let Some(s) = rec.succ {
            if let Some(srec) = self.records.get_mut(&s) {
                srec.preds.remove(&id);
            }
        }
        for p in &rec.preds {
            self.pending_rewire.insert(*p);
        }
        rec
    }

    fn register_dummy(&mut self, w_lo: Version, w_hi: Version, level: u32) -> ArrayId {
        self.ensure_level(level);
        let id = self.next_id;
        self.next_id += 1;
        let empty = VersionedArray::from_sorted(Vec::new(), w_lo, w_hi, level);
        let lvl = &mut self.levels[level as usize];
        let prev = lvl.dummy_index.insert(w_lo.0, id);
        assert!(
            prev.is_none(),
            "dummy index collision at level {level}, w_lo {}",
            w_lo.0
        );
        let idx_len = lvl.dummy_index.len() as u64;
        self.store
            .borrow_mut()
            .charge_aux_entries(Phase::Aux, 1, idx_len);
        self.records.insert(
            id,
            ArrayRecord {
                id,
                level,
                status: Status::Dummy,
                array: empty,
                extent: None,
                succ: None,
                preds: BTreeSet::new(),
            },
        );
        id
    }

    /// A record now starts at version `b` at `level_above`. A dummy at a
    /// lower level whose interval straddles b can no longer route all its
    /// versions through one successor edge, so it splits at b; both halves
    /// (and everything that pointed at the original) are rewired at the end
    /// of the update.
    fn propagate_boundary(&mut self, level_above: u32, b: u64) {
        if b == 0 {
            return;
        }
        for lev in (0..level_above).rev() {
            let lvl = &self.levels[lev as usize];
            let Some((&w_lo, &id)) = lvl.dummy_index.range(..b).next_back() else {
                continue;
            };
            let w_hi = self.records[&id].w_hi().0;
            if w_hi < b {
                continue;
            }
            let rec = self.records.remove(&id).unwrap();
            self.levels[lev as usize].dummy_index.remove(&w_lo);
            if let Some(s) = rec.succ {
                if let Some(srec) = self.records.get_mut(&s) {
                    srec.preds.remove(&id);
                }
            }
            for p in &rec.preds {
                self.pending_rewire.insert(*p);
            }
            let left = self.register_dummy(Version(w_lo), Version(b - 1), lev);
            let right = self.register_dummy(Version(b), Version(w_hi), lev);
            self.pending_rewire.insert(left);
            self.pending_rewire.insert(right);
        }
    }

    /// Recompute a record's successor: the next-level record containing
    /// floor_l(W), i.e. the closest ancestor of the record's root not live
    /// at this level or below.
    fn rewire(&mut self, id: ArrayId) {
        let (level, root, live) = {
            let r = &self.records[&id];
            (r.level, r.w_lo().0, r.is_live())
        };
        // A live record routes queries to history *before* its interval, so its
        // successor is the record one level up containing the closest version
        // below the root that is not already served at or below this level. A
        // dummy marks an interval whose data departed upward, so its successor
        // is simply the record one level up covering the same root.
        let new_succ = if live {
            self.floor_uncovered_below(level + 1, root)
                .and_then(|u| self.record_containing(level + 1, u))
        } else {
            self.record_containing(level + 1, root)
        };
        debug_assert_ne!(new_succ, Some(id));
        self.set_succ(id, new_succ);
    }

    fn set_succ(&mut self, id: ArrayId, new: Option<ArrayId>) {
        let old = self.records[&id].succ;
        if old == new {
            return;
        }
        if let Some(o) = old {
            if let Some(orec) = self.records.get_mut(&o) {
                orec.preds.remove(&id);
            }
        }
        if let Some(n) = new {
            self.records.get_mut(&n).expect("succ target missing").preds.insert(id);
        }
        self.records.get_mut(&id).unwrap().succ = new;
        self.store
            .borrow_mut()
            .charge_aux_entries(Phase::Aux, 1, self.records.len() as u64);
    }

    fn process_rewires(&mut self) {
        while let Some(id) = self.pending_rewire.pop_first() {
            if self.records.contains_key(&id) {
                self.rewire(id);
            }
        }
    }

    fn mark_dirty(&mut self, lo: u64, hi: u64) {
        self.dirty_versions.push((lo, hi));
    }

    fn recompute_highest(&mut self) {
        let mut ranges = std::mem::take(&mut self.dirty_versions);
        if ranges.is_empty() {
            return;
        }
        ranges.sort_unstable();
        // Coalesce overlapping/adjacent dirty ranges.
        let mut merged: Vec<(u64, u64)> = Vec::new();
        for (lo, hi) in ranges {
            match merged.last_mut() {
                Some(last) if lo <= last.1.saturating_add(1) => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        let mut written = 0u64;
        for (lo, hi) in merged {
            written += self.rebuild_highest_range(lo, hi);
        }
        if written > 0 {
            self.store
                .borrow_mut()
                .charge_aux_entries(Phase::Aux, written, self.latest.max(2));
        }
    }

    /// Rebuild the highest-level range map over `[lo, hi]`. The map only
    /// changes at interval boundaries of live arrays, so we cut the range
    /// at those boundaries and evaluate one version per segment instead of
    /// walking every version. Returns the number of map entries written.
    fn rebuild_highest_range(&mut self, lo: u64, hi: u64) -> u64 {
        let lo = lo.max(1);
        if lo > hi {
            return 0;
        }
        let mut cuts: Vec<u64> = vec![lo];
        for lvl in &self.levels {
            // Array covering `lo`, if any, then arrays starting inside.
            if let Some((_, &id)) = lvl.live_index.range(..=lo).next_back() {
                let end = self.records[&id].w_hi().0;
                if end >= lo && end < hi {
                    cuts.push(end + 1);
                }
            }
            if lo < hi {
                for (&start, &id) in lvl.live_index.range(lo + 1..=hi) {
                    cuts.push(start);
                    let end = self.records[&id].w_hi().0;
                    if end < hi {
                        cuts.push(end + 1);
                    }
                }
            }
        }
        cuts.sort_unstable();
        cuts.dedup();
        // Preserve the value in effect just past the range before splicing.
        if hi < self.latest && !self.highest_level.contains_key(&(hi + 1)) {
            let after = self
                .highest_level
                .range(..=hi + 1)
                .next_back()
                .and_then(|(_, h)| *h);
            self.highest_level.insert(hi + 1, after);
        }
        let stale: Vec<u64> = self
            .highest_level
            .range(lo..=hi)
            .map(|(&k, _)| k)
            .collect();
        for k in stale {
            self.highest_level.remove(&k);
        }
        let mut prev = if lo > 1 {
            self.highest_level
                .range(..lo)
                .next_back()
                .map(|(_, h)| *h)
        } else {
            None
        };
        let mut written = 0u64;
        for a in cuts {
            let mut h = None;
            for l in (0..self.levels.len()).rev() {
                if self.live_containing(l as u32, a).is_some() {
                    h = Some(l as u32);
                    break;
                }
            }
            if prev != Some(h) {
                self.highest_level.insert(a, h);
                written += 1;
            }
            prev = Some(h);
        }
        written
    }

    // ---- lookups ----

    /// The live array at `level` whose interval contains the largest
    /// w_lo <= v, verified to contain v.
    pub fn find_array(&self, level: u32, v: Version) -> Option<ArrayId> {
        let lvl = self.levels.get(level as usize)?;
        let (_, &id) = lvl.live_index.range(..=v.0).next_back()?;
        self.records[&id].array.contains_version(v).then_some(id)
    }

    /// The array a query should scan at `level` for version v: the live
    /// array containing the closest covered ancestor of v (predecessor by
    /// w_lo; its interval may end before v, in which case the scan clamps).
    pub(crate) fn scan_target(&self, level: u32, v: Version) -> Option<ArrayId> {
        let lvl = self.levels.get(level as usize)?;
        lvl.live_index.range(..=v.0).next_back().map(|(_, &id)| id)
    }

    /// Number of live-index entries at a level (lookup charging).
    pub(crate) fn index_entries(&self, level: u32) -> u64 {
        self.levels
            .get(level as usize)
            .map_or(0, |l| l.live_index.len() as u64)
    }

    pub(crate) fn level0_record_entries(&self) -> u64 {
        self.levels
            .first()
            .map_or(0, |l| (l.live_index.len() + l.dummy_index.len()) as u64)
    }

    /// Stored successor edge. Errors on a dangling edge.
    pub fn succ_of(&self, id: ArrayId) -> Result<Option<ArrayId>> {
        let rec = self
            .records
            .get(&id)
            .ok_or_else(|| Error::Invariant(format!("succ_of: unknown array {id}")))?;
        match rec.succ {
            Some(s) if !self.records.contains_key(&s) => Err(Error::Invariant(format!(
                "dangling succ edge {id} -> {s}"
            ))),
            other => Ok(other),
        }
    }

    /// Highest level holding an array whose interval contains v.
    pub fn highest_level(&self, v: Version) -> Option<u32> {
        if v.0 == 0 || v.0 > self.latest {
            return None;
        }
        self.highest_level
            .range(..=v.0)
            .next_back()
            .and_then(|(_, h)| *h)
    }

    // ---- invariant enforcement ----

    fn check_level_constraints(&self, arr: &VersionedArray, level: u32) -> Result<()> {
        let cap = level_capacity(level);
        let len = arr.len() as u64;
        let min_live = *arr.live_counts_all().iter().min().unwrap() as u64;
        if len > cap && promotable_version(arr, level).is_some() {
            return Err(Error::Invariant(format!(
                "level {level}: oversized array ({len} > {cap}) still has a promotable suffix"
            )));
        }
        if 3 * min_live < (1u64 << level) {
            return Err(Error::Invariant(format!(
                "level {level}: live count {min_live} below 2^{level}/3"
            )));
        }
        if 6 * min_live < len {
            return Err(Error::Invariant(format!(
                "level {level}: density {min_live}/{len} below 1/6"
            )));
        }
        // Interval disjointness against registered neighbours.
        let lvl = &self.levels[level as usize];
        if let Some((_, &prev)) = lvl.live_index.range(..=arr.w_lo.0).next_back() {
            let p = &self.records[&prev];
            if p.w_hi().0 >= arr.w_lo.0 {
                return Err(Error::Invariant(format!(
                    "level {level}: interval [{}, {}] overlaps [{}, {}]",
                    arr.w_lo.0,
                    arr.w_hi.0,
                    p.w_lo().0,
                    p.w_hi().0
                )));
            }
        }
        if let Some((&next_lo, &next)) = lvl.live_index.range(arr.w_lo.0..).next() {
            let n = &self.records[&next];
            if next_lo <= arr.w_hi.0 {
                return Err(Error::Invariant(format!(
                    "level {level}: interval [{}, {}] overlaps [{}, {}]",
                    arr.w_lo.0,
                    arr.w_hi.0,
                    n.w_lo().0,
                    n.w_hi().0
                )));
            }
        }
        Ok(())
    }

    /// Structural post-conditions on a suffix promoted out of `level`.
    fn note_promotion(&mut self, ex: &VersionedArray, level: u32) -> Result<()> {
        self.stats.promotions += 1;
        let cap = level_capacity(level);
        // Lead mass is monitored, not enforced: interval-extending merges can
        // absorb version ranges whose lead elements live at other levels, so
        // a promoted suffix may carry fewer than (2/3)*2^{l+1} leads. The
        // acceptance sweep bounds how often that happens.
        if 3 * (ex.lead_total() as u64) < 2 * cap {
            self.stats.low_lead_promotions += 1;
        }
        if !self.cfg.invariant_checks {
            return Ok(());
        }
        let len = ex.len() as u64;
        let min_live = *ex.live_counts_all().iter().min().unwrap() as u64;
        if 3 * min_live < cap {
            return Err(Error::Invariant(format!(
                "promotion from level {level}: min live {min_live} below 2^{}/3",
                level + 1
            )));
        }
        if 6 * min_live < len {
            return Err(Error::Invariant(format!(
                "promotion from level {level}: density {min_live}/{len} below 1/6"
            )));
        }
        Ok(())
    }

    /// Structural post-conditions on a subdivision's outputs.
    fn note_subdivision(&mut self, pieces: &[VersionedArray], level: u32) -> Result<()> {
        // Lead fraction is monitored, not enforced: interval-extending merges
        // can absorb version ranges whose lead elements live at other levels,
        // so extra low-lead pieces (beyond the one the theory allows) are
        // possible. The acceptance sweep bounds the count against the number
        // of subdivision events.
        let low_lead = pieces
            .iter()
            .filter(|p| 3 * (p.lead_total() as u64) < 2 * p.len() as u64)
            .count() as u64;
        self.stats.low_lead_pieces += low_lead.saturating_sub(1);
        if !self.cfg.invariant_checks {
            return Ok(());
        }
        let cap = level_capacity(level);
        for p in pieces {
            let len = p.len() as u64;
            // Pieces normally land strictly below the capacity; the
            // exact-capacity fallback cut makes equality legal too.
            if len > cap {
                return Err(Error::Invariant(format!(
                    "subdivision at level {level}: output size {len} above {cap}"
                )));
            }
            let min_live = *p.live_counts_all().iter().min().unwrap() as u64;
            if 6 * min_live < len {
                return Err(Error::Invariant(format!(
                    "subdivision at level {level}: output density {min_live}/{len} below 1/6"
                )));
            }
        }
        Ok(())
    }

    /// Full structural sweep: every registered live array re-checked, plus
    /// index consistency and successor sanity. O(total elements); meant for
    /// verification runs, not the per-update hot path (arrays are immutable,
    /// so the registration-time checks already cover each array once).
    pub fn check_invariants(&self) -> Result<()> {
        for (li, lvl) in self.levels.iter().enumerate() {
            let mut prev_hi: Option<u64> = None;
            for (&w_lo, &id) in &lvl.live_index {
                let rec = &self.records[&id];
                if !rec.is_live() || rec.level as usize != li || rec.w_lo().0 != w_lo {
                    return Err(Error::Invariant(format!(
                        "live index at level {li} disagrees with record {id}"
                    )));
                }
                if let Some(ph) = prev_hi {
                    if w_lo <= ph {
                        return Err(Error::Invariant(format!(
                            "level {li}: intervals overlap at w_lo {w_lo}"
                        )));
                    }
                }
                prev_hi = Some(rec.w_hi().0);
                self.check_level_constraints_registered(&rec.array, li as u32)?;
            }
            let mut prev_dummy_hi: Option<u64> = None;
            for (&w_lo, &id) in &lvl.dummy_index {
                let rec = &self.records[&id];
                if rec.is_live() {
                    return Err(Error::Invariant(format!(
                        "dummy index holds live record {id}"
                    )));
                }
                if let Some(ph) = prev_dummy_hi {
                    if w_lo <= ph {
                        return Err(Error::Invariant(format!(
                            "level {li}: dummy intervals overlap at w_lo {w_lo}"
                        )));
                    }
                }
                prev_dummy_hi = Some(rec.w_hi().0);
            }
        }
        // No dangling successor edges.
        for rec in self.records.values() {
            if let Some(s) = rec.succ {
                match self.records.get(&s) {
                    None => {
                        return Err(Error::Invariant(format!(
                            "dangling succ edge {} -> {s}",
                            rec.id
                        )))
                    }
                    Some(t) if t.level != rec.level + 1 => {
                        return Err(Error::Invariant(format!(
                            "succ edge {} -> {s} skips levels",
                            rec.id
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Same as check_level_constraints but without the neighbour check
    /// (handled by the sweep) and against an already-registered array.
    fn check_level_constraints_registered(&self, arr: &VersionedArray, level: u32) -> Result<()> {
        let cap = level_capacity(level);
        let len = arr.len() as u64;
        let min_live = *arr.live_counts_all().iter().min().unwrap() as u64;
        if len > cap && promotable_version(arr, level).is_some() {
            return Err(Error::Invariant(format!(
                "level {level}: oversized array ({len} > {cap}) still has a promotable suffix"
            )));
        }
        if 3 * min_live < (1u64 << level) {
            return Err(Error::Invariant(format!(
                "level {level}: live count {min_live} below 2^{level}/3"
            )));
        }
        if 6 * min_live < len {
            return Err(Error::Invariant(format!(
                "level {level}: density {min_live}/{len} below 1/6"
            )));
        }
        Ok(())
    }

    /// Deep end-of-run verification: highest-level map against brute force,
    /// lead conservation against the full update log, successor edges
    /// against recomputed floors.
    pub fn verify_deep(&self, inserted: &[(Key, Version)]) -> Result<()> {
        self.check_invariants()?;
        // highest_level map.
        for u in 1..=self.latest {
            let mut want = None;
            for l in (0..self.levels.len()).rev() {
                if self.live_containing(l as u32, u).is_some() {
                    want = Some(l as u32);
                    break;
                }
            }
            if self.highest_level(Version(u)) != want {
                return Err(Error::Invariant(format!(
                    "highest_level({u}) = {:?}, recomputed {:?}",
                    self.highest_level(Version(u)),
                    want
                )));
            }
        }
        // Lead conservation: every inserted pair is lead in at least one live
        // array, and never in two arrays of the same level (cross-level
        // duplicates are legitimate: an extraction leaves the element on
        // both sides of the cut, and a later merge can pull the promoted
        // copy's interval back down over its version).
        let mut lead_levels: HashMap<(Key, u64), Vec<u32>> = HashMap::new();
        for rec in self.records.values().filter(|r| r.is_live()) {
            for e in rec.array.elems() {
                if rec.array.w_lo <= e.version && e.version <= rec.array.w_hi {
                    lead_levels
                        .entry((e.key, e.version.0))
                        .or_default()
                        .push(rec.level);
                }
            }
        }
        for &(k, v) in inserted {
            match lead_levels.get_mut(&(k, v.0)) {
                None => {
                    return Err(Error::Invariant(format!(
                        "element ({k}, {v}) lead in no live array"
                    )))
                }
                Some(levels) => {
                    let n = levels.len();
                    levels.sort_unstable();
                    levels.dedup();
                    if levels.len() != n {
                        return Err(Error::Invariant(format!(
                            "element ({k}, {v}) lead twice within one level"
                        )));
                    }
                }
            }
        }
        // Successor edges point at the record containing the recomputed floor.
        if self.cfg.query_mode == QueryMode::SuccPointers {
            for rec in self.records.values() {
                let want = if rec.is_live() {
                    self.floor_uncovered_below(rec.level + 1, rec.w_lo().0)
                        .and_then(|u| self.record_containing(rec.level + 1, u))
                } else {
                    self.record_containing(rec.level + 1, rec.w_lo().0)
                };
                if rec.succ != want {
                    return Err(Error::Invariant(format!(
                        "succ of {} is {:?}, recomputed {:?}",
                        rec.id, rec.succ, want
                    )));
                }
            }
        }
        Ok(())
    }

    /// Pretty-print the level structure.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "latest={} levels={} stored={}",
            self.latest,
            self.levels.len(),
            self.total_live_elements()
        );
        for (li, lvl) in self.levels.iter().enumerate() {
            let _ = writeln!(
                out,
                "level {li}: {} live, {} dummy (cap {})",
                lvl.live_index.len(),
                lvl.dummy_index.len(),
                level_capacity(li as u32)
            );
            for &id in lvl.live_index.values() {
                let r = &self.records[&id];
                let _ = writeln!(
                    out,
                    "  live  #{id} [{}, {}] n={} lead={} succ={:?}",
                    r.w_lo().0,
                    r.w_hi().0,
                    r.array.len(),
                    r.array.lead_total(),
                    r.succ
                );
            }
            for &id in lvl.dummy_index.values() {
                let r = &self.records[&id];
                let _ = writeln!(
                    out,
                    "  dummy #{id} [{}, {}] succ={:?}",
                    r.w_lo().0,
                    r.w_hi().0,
                    r.succ
                );
            }
        }
        out
    }

    /// Stable digest of the logical structure (levels, statuses, intervals,
    /// element lists): equal digests mean equal structures.
    pub fn structure_digest(&self) -> u64 {
        let mut acc: u64 = 0xcbf29ce484222325;
        let mut mix = |x: u64| {
            acc ^= x;
            acc = acc.wrapping_mul(0x100000001b3);
        };
        for (li, lvl) in self.levels.iter().enumerate() {
            for (&w_lo, &id) in lvl.live_index.iter().chain(lvl.dummy_index.iter()) {
                let r = &self.records[&id];
                mix(li as u64);
                mix(w_lo);
                mix(r.w_hi().0);
                mix(r.is_live() as u64);
                for e in r.array.elems() {
                    mix(e.key);
                    mix(e.version.0);
                    mix(e.payload.map_or(u64::MAX, |p| u64::from_le_bytes(p[..8].try_into().unwrap())));
                }
            }
        }
        acc
    }

    // ---- snapshot support ----

    pub(crate) fn snapshot_parts(
        &self,
    ) -> (
        &EngineConfig,
        u64,
        ArrayId,
        Vec<&ArrayRecord>,
        std::cell::Ref<'_, BlockStore>,
    ) {
        let mut recs: Vec<&ArrayRecord> = self.records.values().collect();
        recs.sort_by_key(|r| r.id);
        (&self.cfg, self.latest, self.next_id, recs, self.store.borrow())
    }

    pub(crate) fn from_parts(
        cfg: EngineConfig,
        latest: u64,
        next_id: ArrayId,
        store: BlockStore,
        records: Vec<ArrayRecord>,
    ) -> Result<Engine> {
        let mut eng = Engine::new(cfg);
        eng.store = RefCell::new(store);
        eng.latest = latest;
        eng.next_id = next_id;
        for rec in records {
            eng.ensure_level(rec.level);
            let lvl = &mut eng.levels[rec.level as usize];
            let index = if rec.is_live() {
                &mut lvl.live_index
            } else {
                &mut lvl.dummy_index
            };
            if index.insert(rec.array.w_lo.0, rec.id).is_some() {
                return Err(Error::Snapshot("duplicate interval in snapshot".into()));
            }
            eng.records.insert(rec.id, rec);
        }
        // Rebuild pred sets from succ edges.
        let edges: Vec<(ArrayId, ArrayId)> = eng
            .records
            .values()
            .filter_map(|r| r.succ.map(|s| (r.id, s)))
            .collect();
        for (from, to) in edges {
            eng.records
                .get_mut(&to)
                .ok_or_else(|| Error::Snapshot(format!("dangling succ {from} -> {to}")))?
                .preds
                .insert(from);
        }
        // Rebuild the highest-level map.
        eng.mark_dirty(1, latest.max(1));
        eng.recompute_highest();
        eng.store.borrow_mut().reset_counters();
        Ok(eng)
    }
}

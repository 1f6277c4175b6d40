//! Versioned arrays: sorted runs of elements tagged with a contiguous
//! version interval, plus the live/lead/density accounting every
//! restructuring decision is computed from.
//!
//! Liveness here is array-local: an element is live at `w` within an array
//! if it is the maximal-version entry `<= w` for its key among that array's
//! elements. All threshold comparisons use exact integer or rational
//! arithmetic.

use num_rational::Ratio;

use crate::element::{Element, Key, Version};
use crate::error::{Error, Result};

/// A sorted, immutable run of elements covering the version interval
/// `[w_lo, w_hi]`. Mutation happens only by building new arrays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionedArray {
    elems: Vec<Element>,
    pub w_lo: Version,
    pub w_hi: Version,
    pub level: u32,
}

/// Closed live interval of one element, in version ids. Never empty in a
/// valid array: build rejects elements dead over the whole interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LiveInterval {
    pub index: usize,
    pub lo: u64,
    pub hi: u64,
}

impl VersionedArray {
    /// Normalize an arbitrary batch of elements into array layout: sort by
    /// (key asc, version desc), dedup identical (key, version) pairs, check
    /// that every element is live at some version of the interval.
    pub fn build(
        mut elems: Vec<Element>,
        w_lo: Version,
        w_hi: Version,
        level: u32,
    ) -> Result<VersionedArray> {
        assert!(w_lo <= w_hi, "empty version interval");
        elems.sort_by(Element::cmp_slot);
        elems.dedup_by(|a, b| a.key == b.key && a.version == b.version);
        let arr = VersionedArray { elems, w_lo, w_hi, level };
        arr.validate()?;
        Ok(arr)
    }

    /// Fast path for callers that already hold a sorted, deduplicated,
    /// all-live slice (subarray extraction, merge output).
    pub(crate) fn from_sorted(
        elems: Vec<Element>,
        w_lo: Version,
        w_hi: Version,
        level: u32,
    ) -> VersionedArray {
        let arr = VersionedArray { elems, w_lo, w_hi, level };
        debug_assert!(arr.validate().is_ok(), "from_sorted got an invalid run");
        arr
    }

    fn validate(&self) -> Result<()> {
        for e in &self.elems {
            if e.version > self.w_hi {
                return Err(Error::VersionBeyondInterval {
                    version: e.version.0,
                    w_hi: self.w_hi.0,
                });
            }
        }
        for w in self.elems.windows(2) {
            if w[0].cmp_slot(&w[1]) != std::cmp::Ordering::Less {
                return Err(Error::Invariant(format!(
                    "array not strictly ordered at key {} v{}",
                    w[1].key, w[1].version
                )));
            }
        }
        for iv in self.live_intervals() {
            if iv.lo > iv.hi {
                let e = &self.elems[iv.index];
                return Err(Error::DeadElement {
                    key: e.key,
                    version: e.version.0,
                    w_lo: self.w_lo.0,
                    w_hi: self.w_hi.0,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    pub fn elems(&self) -> &[Element] {
        &self.elems
    }

    pub fn contains_version(&self, v: Version) -> bool {
        self.w_lo <= v && v <= self.w_hi
    }

    /// One live interval per element. For element `e` with next-larger-version
    /// same-key element `e'`: `[max(e.version, w_lo), min(e'.version - 1, w_hi)]`.
    pub fn live_intervals(&self) -> Vec<LiveInterval> {
        let mut out = Vec::with_capacity(self.elems.len());
        let mut i = 0;
        while i < self.elems.len() {
            let key = self.elems[i].key;
            let mut j = i;
            while j < self.elems.len() && self.elems[j].key == key {
                // Versions are descending within the key group, so the next
                // larger version is the previous slot.
                let hi = if j == i {
                    self.w_hi.0
                } else {
                    (self.elems[j - 1].version.0 - 1).min(self.w_hi.0)
                };
                let lo = self.elems[j].version.0.max(self.w_lo.0);
                out.push(LiveInterval { index: j, lo, hi });
                j += 1;
            }
            i = j;
        }
        out
    }

    /// Number of elements live at `w`. Contract: `w` must lie in the interval.
    pub fn live_count(&self, w: Version) -> usize {
        assert!(
            self.contains_version(w),
            "live_count: {w} outside [{}, {}]",
            self.w_lo,
            self.w_hi
        );
        self.live_intervals()
            .iter()
            .filter(|iv| iv.lo <= w.0 && w.0 <= iv.hi)
            .count()
    }

    /// live_count for every w in [w_lo, w_hi], by a single difference-array
    /// sweep. Index 0 corresponds to w_lo.
    pub fn live_counts_all(&self) -> Vec<usize> {
        let span = (self.w_hi.0 - self.w_lo.0 + 1) as usize;
        let mut diff = vec![0i64; span + 1];
        for iv in self.live_intervals() {
            debug_assert!(iv.lo <= iv.hi);
            diff[(iv.lo - self.w_lo.0) as usize] += 1;
            diff[(iv.hi - self.w_lo.0 + 1) as usize] -= 1;
        }
        let mut out = Vec::with_capacity(span);
        let mut acc = 0i64;
        for d in &diff[..span] {
            acc += d;
            out.push(acc as usize);
        }
        out
    }

    /// `|S(A, w)|` for every w in [w_lo, w_hi]: the number of elements whose
    /// live interval intersects `[w, w_hi]`, i.e. with live hi >= w.
    pub fn suffix_counts_all(&self) -> Vec<usize> {
        let span = (self.w_hi.0 - self.w_lo.0 + 1) as usize;
        let mut by_hi = vec![0usize; span];
        for iv in self.live_intervals() {
            by_hi[(iv.hi - self.w_lo.0) as usize] += 1;
        }
        let mut out = vec![0usize; span];
        let mut acc = 0;
        for w in (0..span).rev() {
            acc += by_hi[w];
            out[w] = acc;
        }
        out
    }

    /// Count of elements whose live interval starts at or after `w` (the
    /// elements that vanish when the interval is truncated below `w`).
    pub fn lo_at_or_after_counts(&self) -> Vec<usize> {
        let span = (self.w_hi.0 - self.w_lo.0 + 1) as usize;
        let mut by_lo = vec![0usize; span];
        for iv in self.live_intervals() {
            by_lo[(iv.lo - self.w_lo.0) as usize] += 1;
        }
        let mut out = vec![0usize; span];
        let mut acc = 0;
        for w in (0..span).rev() {
            acc += by_lo[w];
            out[w] = acc;
        }
        out
    }

    /// `min_w live(A, w) / |A|` as an exact rational.
    pub fn density(&self) -> Result<Ratio<u64>> {
        if self.elems.is_empty() {
            return Err(Error::EmptyDensity);
        }
        let min_live = *self.live_counts_all().iter().min().expect("nonempty span") as u64;
        Ok(Ratio::new(min_live, self.elems.len() as u64))
    }

    /// Number of elements with version exactly `w`.
    pub fn lead_count(&self, w: Version) -> usize {
        self.elems.iter().filter(|e| e.version == w).count()
    }

    /// Number of lead elements: version within [w_lo, w_hi]. Elements with
    /// smaller versions are copies inherited from other arrays.
    pub fn lead_total(&self) -> usize {
        self.elems
            .iter()
            .filter(|e| self.w_lo <= e.version && e.version <= self.w_hi)
            .count()
    }

    /// S(A, v): every element live at some version in [v, w_hi], in array
    /// order.
    pub fn suffix_subarray(&self, v: Version) -> Vec<Element> {
        assert!(self.contains_version(v));
        let ivs = self.live_intervals();
        ivs.iter()
            .filter(|iv| iv.hi >= v.0)
            .map(|iv| self.elems[iv.index])
            .collect()
    }

    /// New array over `[lo, hi]` keeping every element live at some version
    /// of that subinterval. Used for extraction suffixes, remainders and
    /// subdivision pieces.
    pub fn restrict(&self, lo: Version, hi: Version, level: u32) -> VersionedArray {
        assert!(self.w_lo <= lo && hi <= self.w_hi && lo <= hi);
        let ivs = self.live_intervals();
        let elems: Vec<Element> = ivs
            .iter()
            .filter(|iv| iv.lo <= hi.0 && iv.hi >= lo.0)
            .map(|iv| self.elems[iv.index])
            .collect();
        VersionedArray::from_sorted(elems, lo, hi, level)
    }

    /// Linear merge of two sorted runs. The result covers
    /// `[min(w_lo), max(w_hi)]`; identical (key, version) duplicates keep one
    /// copy, and elements left dead by the union (a copy superseded by a
    /// newer same-key version from the other run) are dropped.
    pub fn merge(a: &VersionedArray, b: &VersionedArray, level: u32) -> VersionedArray {
        let w_lo = a.w_lo.min(b.w_lo);
        let w_hi = a.w_hi.max(b.w_hi);
        let mut merged = Vec::with_capacity(a.elems.len() + b.elems.len());
        let (mut i, mut j) = (0, 0);
        while i < a.elems.len() || j < b.elems.len() {
            let take_a = match (a.elems.get(i), b.elems.get(j)) {
                (Some(x), Some(y)) => x.cmp_slot(y) != std::cmp::Ordering::Greater,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => unreachable!(),
            };
            let e = if take_a {
                let e = a.elems[i];
                i += 1;
                e
            } else {
                let e = b.elems[j];
                j += 1;
                e
            };
            if let Some(last) = merged.last() {
                let last: &Element = last;
                if last.key == e.key && last.version == e.version {
                    continue;
                }
            }
            merged.push(e);
        }
        let tmp = VersionedArray { elems: merged, w_lo, w_hi, level };
        // Drop elements dead over the whole merged interval.
        let ivs = tmp.live_intervals();
        let live: Vec<Element> = ivs
            .iter()
            .filter(|iv| iv.lo <= iv.hi)
            .map(|iv| tmp.elems[iv.index])
            .collect();
        VersionedArray::from_sorted(live, w_lo, w_hi, level)
    }

    /// Position of the first element with key >= k, by binary search.
    pub fn lower_bound(&self, k: Key) -> usize {
        self.elems.partition_point(|e| e.key < k)
    }

    /// Range scan at version `v`: for each key in [k1, k2] report the element
    /// with the largest version <= v present in this array, tombstones
    /// included. Binary search locates k1, then one left-to-right scan.
    pub fn scan_range(&self, v: Version, k1: Key, k2: Key) -> Vec<Element> {
        assert!(self.contains_version(v), "scan_range: version outside interval");
        assert!(k1 <= k2);
        let mut out = Vec::new();
        let mut i = self.lower_bound(k1);
        while i < self.elems.len() && self.elems[i].key <= k2 {
            let key = self.elems[i].key;
            // Versions descend within the group: the first <= v is the max.
            while i < self.elems.len() && self.elems[i].key == key {
                if self.elems[i].version <= v
                    && out.last().is_none_or(|e: &Element| e.key != key)
                {
                    out.push(self.elems[i]);
                }
                i += 1;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::element::Element;
    use proptest::prelude::*;

    fn el(key: Key, version: u64) -> Element {
        Element::new(key, version, Some([version as u8; 16]))
    }

    fn tomb(key: Key, version: u64) -> Element {
        Element::new(key, version, None)
    }

    /// E1 from the update sequence v1:a, v2:b, v3:a (a=1, b=2).
    fn e1() -> VersionedArray {
        VersionedArray::build(
            vec![el(1, 3), el(2, 2), el(1, 1)],
            Version(1),
            Version(3),
            0,
        )
        .unwrap()
    }

    #[test]
    fn build_sorts_per_ordering_rule() {
        let a = e1();
        let kv: Vec<(Key, u64)> = a.elems().iter().map(|e| (e.key, e.version.0)).collect();
        assert_eq!(kv, vec![(1, 3), (1, 1), (2, 2)]);
    }

    #[test]
    fn build_empty_is_valid() {
        let a = VersionedArray::build(vec![], Version(1), Version(1), 0).unwrap();
        assert!(a.is_empty());
    }

    #[test]
    fn build_dedups_identical_copies() {
        let a =
            VersionedArray::build(vec![el(1, 1), el(1, 1)], Version(1), Version(1), 0).unwrap();
        assert_eq!(a.len(), 1);
    }

    #[test]
    fn build_rejects_future_versions() {
        let err = VersionedArray::build(vec![el(1, 5)], Version(1), Version(3), 0).unwrap_err();
        assert!(matches!(err, Error::VersionBeyondInterval { .. }));
    }

    #[test]
    fn build_rejects_dead_elements() {
        // (a,1) overwritten by (a,2) before the interval starts at 2.
        let err = VersionedArray::build(vec![el(1, 1), el(1, 2)], Version(2), Version(2), 0)
            .unwrap_err();
        assert!(matches!(err, Error::DeadElement { .. }));
    }

    #[test]
    fn live_intervals_match_replay() {
        let a = e1();
        let ivs = a.live_intervals();
        // elems: (a,3) (a,1) (b,2)
        assert_eq!((ivs[0].lo, ivs[0].hi), (3, 3));
        assert_eq!((ivs[1].lo, ivs[1].hi), (1, 2));
        assert_eq!((ivs[2].lo, ivs[2].hi), (2, 3));
    }

    #[test]
    fn live_counts_match_replay() {
        let a = e1();
        assert_eq!(a.live_count(Version(1)), 1);
        assert_eq!(a.live_count(Version(2)), 2);
        assert_eq!(a.live_count(Version(3)), 2);
        assert_eq!(a.live_counts_all(), vec![1, 2, 2]);
    }

    #[test]
    fn density_values() {
        assert_eq!(e1().density().unwrap(), Ratio::new(1, 3));
        let single =
            VersionedArray::build(vec![el(1, 1)], Version(1), Version(1), 0).unwrap();
        assert_eq!(single.density().unwrap(), Ratio::new(1, 1));
        let two = VersionedArray::build(vec![el(1, 1), el(2, 2)], Version(1), Version(2), 0)
            .unwrap();
        assert_eq!(two.density().unwrap(), Ratio::new(1, 2));
        let empty = VersionedArray::build(vec![], Version(1), Version(1), 0).unwrap();
        assert!(matches!(empty.density(), Err(Error::EmptyDensity)));
    }

    #[test]
    fn lead_accounting() {
        let a = e1();
        assert_eq!(a.lead_count(Version(2)), 1);
        assert_eq!(a.lead_total(), 3);
        // A lone copy carried into a later interval.
        let copy = VersionedArray::build(vec![el(1, 1)], Version(2), Version(2), 0).unwrap();
        assert_eq!(copy.lead_total(), 0);
    }

    #[test]
    fn suffix_subarray_values() {
        let a = e1();
        assert_eq!(a.suffix_subarray(Version(1)).len(), 3);
        assert_eq!(a.suffix_subarray(Version(2)).len(), 3);
        let s3 = a.suffix_subarray(Version(3));
        let kv: Vec<(Key, u64)> = s3.iter().map(|e| (e.key, e.version.0)).collect();
        assert_eq!(kv, vec![(1, 3), (2, 2)]);
    }

    #[test]
    fn merge_examples() {
        let a = e1();
        let c = VersionedArray::build(vec![el(3, 4)], Version(4), Version(4), 0).unwrap();
        let m = VersionedArray::merge(&a, &c, 0);
        assert_eq!(m.len(), 4);
        assert_eq!((m.w_lo, m.w_hi), (Version(1), Version(4)));

        let empty = VersionedArray::build(vec![], Version(4), Version(4), 0).unwrap();
        let m2 = VersionedArray::merge(&a, &empty, 0);
        assert_eq!(m2.elems(), a.elems());

        // Both sides carry the same copy (a,1): one survives.
        let x = VersionedArray::build(vec![el(1, 1)], Version(1), Version(2), 0).unwrap();
        let y = VersionedArray::build(vec![el(1, 1), el(2, 3)], Version(3), Version(3), 0)
            .unwrap();
        let m3 = VersionedArray::merge(&x, &y, 0);
        assert_eq!(m3.elems().iter().filter(|e| e.key == 1).count(), 1);
    }

    #[test]
    fn scan_range_examples() {
        let a = e1();
        let r = a.scan_range(Version(2), 1, 2);
        let kv: Vec<(Key, u64)> = r.iter().map(|e| (e.key, e.version.0)).collect();
        assert_eq!(kv, vec![(1, 1), (2, 2)]);

        let r = a.scan_range(Version(3), 1, 1);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].version, Version(3));

        assert!(a.scan_range(Version(1), 2, 2).is_empty());
    }

    #[test]
    fn scan_range_keeps_tombstones() {
        let a = VersionedArray::build(vec![el(1, 1), tomb(1, 2)], Version(1), Version(2), 0)
            .unwrap();
        let r = a.scan_range(Version(2), 1, 1);
        assert_eq!(r.len(), 1);
        assert!(r[0].is_tombstone());
    }

    // ---- brute-force cross-checks ----

    /// Brute-force array-local liveness: e is live at w iff e.version <= w
    /// and no same-key element has a version in (e.version, w].
    fn brute_live(a: &VersionedArray, idx: usize, w: u64) -> bool {
        let e = &a.elems()[idx];
        if e.version.0 > w {
            return false;
        }
        !a.elems()
            .iter()
            .any(|o| o.key == e.key && o.version.0 > e.version.0 && o.version.0 <= w)
    }

    /// Random batch of updates shaped like a real workload slice: element
    /// versions consecutive in [1, n], arbitrary keys, then built over the
    /// full interval.
    fn arb_array(max_n: usize, key_space: Key) -> impl Strategy<Value = VersionedArray> {
        (1..=max_n)
            .prop_flat_map(move |n| {
                proptest::collection::vec(0..key_space, n).prop_map(move |keys| {
                    let elems: Vec<Element> = keys
                        .iter()
                        .enumerate()
                        .map(|(i, &k)| el(k, i as u64 + 1))
                        .collect();
                    VersionedArray::build(elems, Version(1), Version(keys.len() as u64), 0)
                        .unwrap()
                })
            })
            .prop_filter("nonempty", |a| !a.is_empty())
    }

    proptest! {
        #[test]
        fn liveness_agrees_with_brute_force(a in arb_array(24, 6)) {
            let ivs = a.live_intervals();
            for iv in &ivs {
                for w in a.w_lo.0..=a.w_hi.0 {
                    let in_iv = iv.lo <= w && w <= iv.hi;
                    prop_assert_eq!(in_iv, brute_live(&a, iv.index, w));
                }
            }
        }

        #[test]
        fn density_matches_brute_force_loop(a in arb_array(24, 6)) {
            let mut min_live = usize::MAX;
            for w in a.w_lo.0..=a.w_hi.0 {
                min_live = min_live.min(a.live_count(Version(w)));
            }
            prop_assert_eq!(a.density().unwrap(), Ratio::new(min_live as u64, a.len() as u64));
        }

        #[test]
        fn suffix_subarray_is_monotone(a in arb_array(24, 6)) {
            prop_assert_eq!(a.suffix_subarray(a.w_lo), a.elems().to_vec());
            let mut prev: Option<Vec<Element>> = None;
            for v in (a.w_lo.0..=a.w_hi.0).rev() {
                let s = a.suffix_subarray(Version(v));
                if let Some(p) = &prev {
                    // larger v => subset of smaller v's suffix
                    for e in p {
                        prop_assert!(s.contains(e));
                    }
                }
                prev = Some(s);
            }
        }

        #[test]
        fn live_count_is_non_decreasing_in_w(a in arb_array(24, 6)) {
            let counts = a.live_counts_all();
            for w in counts.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
        }

        #[test]
        fn sweep_counts_match_pointwise(a in arb_array(24, 6)) {
            let all = a.live_counts_all();
            let suf = a.suffix_counts_all();
            for w in a.w_lo.0..=a.w_hi.0 {
                let i = (w - a.w_lo.0) as usize;
                prop_assert_eq!(all[i], a.live_count(Version(w)));
                prop_assert_eq!(suf[i], a.suffix_subarray(Version(w)).len());
            }
        }

        #[test]
        fn merge_then_scan_equals_scan_then_merge(
            a in arb_array(16, 5),
            extra in proptest::collection::vec(0u64..5, 1..8),
        ) {
            // Build b as the continuation of a's update sequence.
            let base = a.w_hi.0;
            let elems: Vec<Element> = extra
                .iter()
                .enumerate()
                .map(|(i, &k)| el(k, base + i as u64 + 1))
                .collect();
            let b = VersionedArray::build(
                elems, Version(base + 1), Version(base + extra.len() as u64), 0,
            ).unwrap();
            let m = VersionedArray::merge(&a, &b, 0);
            for v in m.w_lo.0..=m.w_hi.0 {
                let got = m.scan_range(Version(v), 0, 5);
                // Closest-ancestor selection over the union of per-side scans.
                let sa = a.scan_range(Version(v.min(a.w_hi.0)), 0, 5);
                let sb = if v >= b.w_lo.0 {
                    b.scan_range(Version(v.min(b.w_hi.0)), 0, 5)
                } else {
                    vec![]
                };
                let mut want: Vec<Element> = Vec::new();
                for k in 0..=5u64 {
                    let best = sa.iter().chain(sb.iter())
                        .filter(|e| e.key == k && e.version.0 <= v)
                        .max_by_key(|e| e.version.0);
                    if let Some(e) = best {
                        want.push(*e);
                    }
                }
                prop_assert_eq!(got, want);
            }
        }
    }
}

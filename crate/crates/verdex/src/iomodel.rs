//! Simulated two-level memory: a block device with block size B (in
//! records), an LRU cache of M blocks, and per-phase transfer counters.
//! Arrays are stored as contiguous record extents aligned to block
//! boundaries, so scan/merge/search costs are measurable.
//!
//! Engine and query logic never read B or M; changing them changes only
//! counters, never results. The one B-aware helper, `span_blocks`, exists
//! purely for measurement output.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::element::{Element, Version, PAYLOAD_LEN};

/// Fixed record width: key (8) + version (8) + flag (1) + payload (16).
pub const RECORD_BYTES: usize = 33;

pub type Record = [u8; RECORD_BYTES];

pub fn encode_element(e: &Element) -> Record {
    let mut r = [0u8; RECORD_BYTES];
    r[0..8].copy_from_slice(&e.key.to_le_bytes());
    r[8..16].copy_from_slice(&e.version.0.to_le_bytes());
    match &e.payload {
        Some(p) => {
            r[16] = 1;
            r[17..17 + PAYLOAD_LEN].copy_from_slice(p);
        }
        None => r[16] = 0,
    }
    r
}

pub fn decode_element(r: &Record) -> Element {
    let key = u64::from_le_bytes(r[0..8].try_into().unwrap());
    let version = u64::from_le_bytes(r[8..16].try_into().unwrap());
    let payload = if r[16] == 1 {
        Some(r[17..17 + PAYLOAD_LEN].try_into().unwrap())
    } else {
        None
    };
    Element { key, version: Version(version), payload }
}

/// Which engine activity a transfer is charged to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Update,
    Merge,
    Subdivide,
    Query,
    Aux,
}

pub const PHASES: [Phase; 5] =
    [Phase::Update, Phase::Merge, Phase::Subdivide, Phase::Query, Phase::Aux];

impl Phase {
    fn idx(self) -> usize {
        match self {
            Phase::Update => 0,
            Phase::Merge => 1,
            Phase::Subdivide => 2,
            Phase::Query => 3,
            Phase::Aux => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Update => "update",
            Phase::Merge => "merge",
            Phase::Subdivide => "subdivide",
            Phase::Query => "query",
            Phase::Aux => "aux",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCounter {
    pub reads: u64,
    pub writes: u64,
}

/// Phase-tagged block transfer counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoReport {
    pub update: PhaseCounter,
    pub merge: PhaseCounter,
    pub subdivide: PhaseCounter,
    pub query: PhaseCounter,
    pub aux: PhaseCounter,
    pub total_reads: u64,
    pub total_writes: u64,
}

impl IoReport {
    pub fn phase(&self, p: Phase) -> PhaseCounter {
        match p {
            Phase::Update => self.update,
            Phase::Merge => self.merge,
            Phase::Subdivide => self.subdivide,
            Phase::Query => self.query,
            Phase::Aux => self.aux,
        }
    }

    pub fn total_blocks(&self) -> u64 {
        self.total_reads + self.total_writes
    }

    /// Update-side cost: everything except queries, optionally without aux.
    pub fn update_blocks(&self, include_aux: bool) -> u64 {
        let mut t = self.update.reads
            + self.update.writes
            + self.merge.reads
            + self.merge.writes
            + self.subdivide.reads
            + self.subdivide.writes;
        if include_aux {
            t += self.aux.reads + self.aux.writes;
        }
        t
    }

    pub fn query_blocks(&self) -> u64 {
        self.query.reads + self.query.writes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExtentId(pub u64);

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Extent {
    /// First record address; always a multiple of the block size.
    pub start: u64,
    pub len: u64,
}

#[derive(Debug, Clone, Copy)]
struct CacheEntry {
    stamp: u64,
    dirty: Option<Phase>,
}

/// The simulated device. Holds the actual record bytes so snapshots are
/// inspectable and reads return real data.
#[derive(Debug)]
pub struct BlockStore {
    block_records: usize,
    cache_blocks: usize,
    extents: Vec<Extent>,
    data: Vec<Record>,
    cache: HashMap<u64, CacheEntry>,
    clock: u64,
    reads: [u64; 5],
    writes: [u64; 5],
    /// Leaky-bucket accumulators for amortized (fractional) charges.
    frac_writes: [f64; 5],
    frac_reads: [f64; 5],
    phase: Phase,
}

impl BlockStore {
    pub fn new(block_records: usize, cache_blocks: usize) -> Self {
        assert!(block_records >= 1 && cache_blocks >= 1);
        BlockStore {
            block_records,
            cache_blocks,
            extents: Vec::new(),
            data: Vec::new(),
            cache: HashMap::new(),
            clock: 0,
            reads: [0; 5],
            writes: [0; 5],
            frac_writes: [0.0; 5],
            frac_reads: [0.0; 5],
            phase: Phase::Update,
        }
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Allocate a block-aligned extent of `n_records` records.
    pub fn alloc_extent(&mut self, n_records: usize) -> ExtentId {
        let b = self.block_records as u64;
        let start = (self.data.len() as u64).div_ceil(b) * b;
        self.data.resize(start as usize + n_records, [0u8; RECORD_BYTES]);
        self.extents.push(Extent { start, len: n_records as u64 });
        ExtentId(self.extents.len() as u64 - 1)
    }

    pub fn extent(&self, id: ExtentId) -> Extent {
        self.extents[id.0 as usize]
    }

    pub fn extent_count(&self) -> usize {
        self.extents.len()
    }

    fn addr(&self, id: ExtentId, index: usize) -> u64 {
        let e = self.extents[id.0 as usize];
        assert!((index as u64) < e.len, "record index {index} out of extent bounds {}", e.len);
        e.start + index as u64
    }

    fn touch(&mut self, block: u64, write: bool) {
        self.clock += 1;
        let clock = self.clock;
        let phase = self.phase;
        if let Some(entry) = self.cache.get_mut(&block) {
            entry.stamp = clock;
            if write {
                entry.dirty = Some(phase);
            }
            return;
        }
        // Miss. Writes allocate without fetching; reads transfer one block.
        if !write {
            self.reads[phase.idx()] += 1;
        }
        if self.cache.len() >= self.cache_blocks {
            let (&victim, _) = self
                .cache
                .iter()
                .min_by_key(|(_, e)| e.stamp)
                .expect("cache nonempty");
            let evicted = self.cache.remove(&victim).unwrap();
            if let Some(p) = evicted.dirty {
                self.writes[p.idx()] += 1;
            }
        }
        self.cache.insert(block, CacheEntry { stamp: clock, dirty: write.then_some(phase) });
    }

    pub fn read_record(&mut self, id: ExtentId, index: usize) -> Record {
        let addr = self.addr(id, index);
        self.touch(addr / self.block_records as u64, false);
        self.data[addr as usize]
    }

    pub fn write_record(&mut self, id: ExtentId, index: usize, rec: Record) {
        let addr = self.addr(id, index);
        self.touch(addr / self.block_records as u64, true);
        self.data[addr as usize] = rec;
    }

    pub fn read_seq(&mut self, id: ExtentId, offset: usize, len: usize) -> Vec<Record> {
        (offset..offset + len).map(|i| self.read_record(id, i)).collect()
    }

    pub fn write_seq(&mut self, id: ExtentId, offset: usize, recs: &[Record]) {
        for (i, r) in recs.iter().enumerate() {
            self.write_record(id, offset + i, *r);
        }
    }

    /// Write every dirty block back. Ends each public engine operation so
    /// per-operation counts are well-defined. Blocks stay resident (clean).
    pub fn flush(&mut self) {
        for entry in self.cache.values_mut() {
            if let Some(p) = entry.dirty.take() {
                self.writes[p.idx()] += 1;
            }
        }
    }

    /// Amortized charge for auxiliary-structure maintenance; materialized
    /// into whole blocks through a leaky bucket.
    pub fn charge_frac_writes(&mut self, phase: Phase, blocks: f64) {
        let acc = &mut self.frac_writes[phase.idx()];
        *acc += blocks;
        while *acc >= 1.0 {
            self.writes[phase.idx()] += 1;
            *acc -= 1.0;
        }
    }

    pub fn charge_reads(&mut self, phase: Phase, blocks: u64) {
        self.reads[phase.idx()] += blocks;
    }

    /// Fractional charge for touching `entries` entries of a balanced search
    /// structure of the given size: entries * log2(size) / B blocks. Keeps
    /// the cost model honest about index maintenance without the engine ever
    /// reading B directly.
    pub fn charge_aux_entries(&mut self, phase: Phase, entries: u64, structure_size: u64) {
        let depth = (structure_size.max(2) as f64).log2();
        let blocks = entries as f64 * depth / self.block_records as f64;
        self.charge_frac_writes(phase, blocks);
    }

    /// One point lookup in a search structure with `entries` entries:
    /// ceil(log2(entries)) + 1 block reads.
    pub fn charge_index_probe(&mut self, phase: Phase, entries: u64) {
        let probes = (entries.max(1) as f64).log2().ceil() as u64 + 1;
        self.reads[phase.idx()] += probes;
    }

    /// Number of blocks spanned by `len` records starting at `offset` within
    /// the extent. Measurement only; never consulted by engine logic.
    pub fn span_blocks(&self, id: ExtentId, offset: usize, len: usize) -> u64 {
        if len == 0 {
            return 0;
        }
        let e = self.extents[id.0 as usize];
        let b = self.block_records as u64;
        let first = (e.start + offset as u64) / b;
        let last = (e.start + offset as u64 + len as u64 - 1) / b;
        last - first + 1
    }

    pub fn snapshot_report(&self) -> IoReport {
        let mut rep = IoReport::default();
        for p in PHASES {
            let c = PhaseCounter { reads: self.reads[p.idx()], writes: self.writes[p.idx()] };
            match p {
                Phase::Update => rep.update = c,
                Phase::Merge => rep.merge = c,
                Phase::Subdivide => rep.subdivide = c,
                Phase::Query => rep.query = c,
                Phase::Aux => rep.aux = c,
            }
        }
        rep.total_reads = self.reads.iter().sum();
        rep.total_writes = self.writes.iter().sum();
        rep
    }

    pub fn reset_counters(&mut self) {
        self.reads = [0; 5];
        self.writes = [0; 5];
        self.frac_reads = [0.0; 5];
        self.frac_writes = [0.0; 5];
    }

    pub(crate) fn raw_data(&self) -> &[Record] {
        &self.data
    }

    pub(crate) fn extents(&self) -> &[Extent] {
        &self.extents
    }

    pub(crate) fn restore(extents: Vec<Extent>, data: Vec<Record>, block_records: usize, cache_blocks: usize) -> Self {
        let mut s = BlockStore::new(block_records, cache_blocks);
        s.extents = extents;
        s.data = data;
        s
    }
}

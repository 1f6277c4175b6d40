//! Snapshot serialization: the whole engine state in one inspectable file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset 0   magic "VDXSNAP1" (8 bytes)
//!        8   u32 record width in bytes (33)
//!       12   u64 extent count
//!       20   extent table: (u64 start, u64 len) per extent, in id order
//!        .   u64 arena length in records
//!        .   arena: raw records, record-width bytes each
//!        .   u64 metadata length in bytes
//!        .   metadata: JSON (config, latest version, id counter, one entry
//!            per array record with its level/status/interval/extent/succ)
//! ```
//!
//! The arena is the device image, so the same extent table that drives the
//! IO model also locates every element on disk. Element data is *not*
//! duplicated in the JSON: arrays are rebuilt by decoding their extents.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::element::Version;
use crate::engine::{ArrayId, ArrayRecord, Engine, Status};
use crate::error::{Error, Result};
use crate::iomodel::{decode_element, BlockStore, Extent, ExtentId, Record, RECORD_BYTES};
use crate::varray::VersionedArray;

const MAGIC: &[u8; 8] = b"VDXSNAP1";

#[derive(Serialize, Deserialize)]
struct RecordMeta {
    id: ArrayId,
    level: u32,
    status: Status,
    w_lo: u64,
    w_hi: u64,
    extent: Option<ExtentId>,
    succ: Option<ArrayId>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: EngineConfig,
    latest: u64,
    next_id: ArrayId,
    records: Vec<RecordMeta>,
}

/// Write the engine's full state to `path`.
pub fn save(eng: &Engine, path: &Path) -> Result<()> {
    let (cfg, latest, next_id, records, store) = eng.snapshot_parts();
    let meta = Meta {
        config: *cfg,
        latest,
        next_id,
        records: records
            .iter()
            .map(|r| RecordMeta {
                id: r.id,
                level: r.level,
                status: r.status,
                w_lo: r.w_lo().0,
                w_hi: r.w_hi().0,
                extent: r.extent,
                succ: r.succ,
            })
            .collect(),
    };
    let meta_bytes = serde_json::to_vec(&meta)
        .map_err(|e| Error::Snapshot(format!("metadata encode: {e}")))?;

    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    f.write_all(&(RECORD_BYTES as u32).to_le_bytes())?;
    let extents = store.extents();
    f.write_all(&(extents.len() as u64).to_le_bytes())?;
    for e in extents {
        f.write_all(&e.start.to_le_bytes())?;
        f.write_all(&e.len.to_le_bytes())?;
    }
    let data = store.raw_data();
    f.write_all(&(data.len() as u64).to_le_bytes())?;
    for rec in data {
        f.write_all(rec)?;
    }
    f.write_all(&(meta_bytes.len() as u64).to_le_bytes())?;
    f.write_all(&meta_bytes)?;
    f.flush()?;
    Ok(())
}

/// Rebuild an engine from a snapshot file. IO counters start at zero.
pub fn load(path: &Path) -> Result<Engine> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Snapshot("bad magic".into()));
    }
    let width = read_u32(&mut f)?;
    if width as usize != RECORD_BYTES {
        return Err(Error::Snapshot(format!(
            "record width {width} != {RECORD_BYTES}"
        )));
    }
    let n_extents = read_u64(&mut f)? as usize;
    let mut extents = Vec::with_capacity(n_extents);
    for _ in 0..n_extents {
        let start = read_u64(&mut f)?;
        let len = read_u64(&mut f)?;
        extents.push(Extent { start, len });
    }
    let n_records = read_u64(&mut f)? as usize;
    let mut data: Vec<Record> = Vec::with_capacity(n_records);
    for _ in 0..n_records {
        let mut rec = [0u8; RECORD_BYTES];
        f.read_exact(&mut rec)?;
        data.push(rec);
    }
    let meta_len = read_u64(&mut f)? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    f.read_exact(&mut meta_bytes)?;
    let meta: Meta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| Error::Snapshot(format!("metadata decode: {e}")))?;

    for e in &extents {
        let end = e.start + e.len;
        if end as usize > data.len() {
            return Err(Error::Snapshot(format!(
                "extent [{}, {end}) beyond arena of {}",
                e.start,
                data.len()
            )));
        }
    }
    let records = meta
        .records
        .into_iter()
        .map(|m| {
            let elems = match m.extent {
                Some(ExtentId(eid)) => {
                    let e = extents
                        .get(eid as usize)
                        .ok_or_else(|| Error::Snapshot(format!("record {}: bad extent", m.id)))?;
                    data[e.start as usize..(e.start + e.len) as usize]
                        .iter()
                        .map(decode_element)
                        .collect()
                }
                None => Vec::new(),
            };
            let array =
                VersionedArray::from_sorted(elems, Version(m.w_lo), Version(m.w_hi), m.level);
            Ok(ArrayRecord {
                id: m.id,
                level: m.level,
                status: m.status,
                array,
                extent: m.extent,
                succ: m.succ,
                preds: Default::default(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let store = BlockStore::restore(
        extents,
        data,
        meta.config.block_records,
        meta.config.cache_blocks,
    );
    Engine::from_parts(meta.config, meta.latest, meta.next_id, store, records)
}

fn read_u32(f: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    f.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(f: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    f.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::QueryMode;
    use crate::element::Key;
    use crate::oracle::OracleLog;

    fn tmp(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("verdex-snaptest-{}-{name}", std::process::id()));
        p
    }

    fn mixed_workload(eng: &mut Engine, log: &mut OracleLog, n: u64) {
        for i in 0..n {
            let key: Key = (i * 7) % 23;
            let payload = if i % 5 == 4 { None } else { Some([i as u8; 16]) };
            eng.update(key, payload).unwrap();
            log.push(key, payload);
        }
    }

    #[test]
    fn roundtrip_preserves_structure_and_answers() {
        for mode in [QueryMode::AuxIndex, QueryMode::SuccPointers] {
            let cfg = EngineConfig { query_mode: mode, ..EngineConfig::default() };
            let mut eng = Engine::new(cfg);
            let mut log = OracleLog::new();
            mixed_workload(&mut eng, &mut log, 60);
            let path = tmp(mode.name());
            save(&eng, &path).unwrap();
            let eng2 = load(&path).unwrap();
            std::fs::remove_file(&path).ok();
            assert_eq!(eng.structure_digest(), eng2.structure_digest());
            for v in [1u64, 17, 35, 60] {
                let a = eng.range_query(Version(v), 0, u64::MAX).unwrap();
                let b = eng2.range_query(Version(v), 0, u64::MAX).unwrap();
                assert_eq!(a.entries, b.entries, "mode {mode:?} v={v}");
                let want = log.query(Version(v), 0, u64::MAX).unwrap();
                assert_eq!(b.entries, want, "mode {mode:?} v={v} vs oracle");
            }
            eng2.check_invariants().unwrap();
        }
    }

    #[test]
    fn rejects_corrupt_header() {
        let path = tmp("corrupt");
        std::fs::write(&path, b"NOTASNAP________").unwrap();
        let err = load(&path).unwrap_err();
        std::fs::remove_file(&path).ok();
        assert!(matches!(err, Error::Snapshot(_)));
    }

    #[test]
    fn updates_continue_after_load() {
        let mut eng = Engine::new(EngineConfig {
            query_mode: QueryMode::SuccPointers,
            invariant_checks: true,
            ..EngineConfig::default()
        });
        let mut log = OracleLog::new();
        mixed_workload(&mut eng, &mut log, 30);
        let path = tmp("resume");
        save(&eng, &path).unwrap();
        let mut eng2 = load(&path).unwrap();
        std::fs::remove_file(&path).ok();
        for i in 0..30u64 {
            let key = (i * 11) % 23;
            let payload = Some([(i + 100) as u8; 16]);
            eng2.update(key, payload).unwrap();
            log.push(key, payload);
        }
        eng2.check_invariants().unwrap();
        for v in [5u64, 30, 45, 60] {
            let got = eng2.range_query(Version(v), 0, u64::MAX).unwrap();
            let want = log.query(Version(v), 0, u64::MAX).unwrap();
            assert_eq!(got.entries, want, "v={v}");
        }
    }
}

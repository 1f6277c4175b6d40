//! Measurement and verification harness: runs a generated workload through
//! the engine, samples space/update/query costs at checkpoints, and (in
//! verification mode) cross-checks every answer against the brute-force
//! reference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::EngineConfig;
use crate::element::Version;
use crate::engine::Engine;
use crate::error::Result;
use crate::oracle::OracleLog;
use crate::workload::WorkloadSpec;

/// Measurements taken after the first `n` updates of a run.
#[derive(Debug, Clone, Serialize)]
pub struct CheckpointRow {
    /// Updates applied so far (= latest version).
    pub n: u64,
    /// Live, non-tombstoned keys at version n (oracle count).
    pub n_v: u64,
    /// Sum of |A| over live arrays.
    pub stored_elements: u64,
    /// stored_elements / n.
    pub space_ratio: f64,
    pub level_count: usize,
    /// Cumulative structural-write blocks (update+merge+subdivide+aux).
    pub update_blocks: u64,
    /// The same excluding the aux phase (index/pointer maintenance).
    pub update_blocks_no_aux: u64,
    pub amortized_blocks: f64,
    pub amortized_blocks_no_aux: f64,
    /// Mean result size over the measured ranges.
    pub query_z_mean: f64,
    /// Mean query-phase blocks per range.
    pub query_blocks_mean: f64,
    pub query_levels_mean: f64,
    /// Ranges whose per-array examined totals exceeded |A| (scan-cost bound).
    pub scan_bound_violations: u64,
    pub promotions: u64,
    pub subdivisions: u64,
    pub oversized_dense: u64,
    pub low_lead_pieces: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub spec: WorkloadSpec,
    pub query_mode: String,
    pub block_records: usize,
    pub rows: Vec<CheckpointRow>,
    pub structure_digest: u64,
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "n,n_v,stored_elements,space_ratio,level_count,update_blocks,\
             update_blocks_no_aux,amortized_blocks,amortized_blocks_no_aux,\
             query_z_mean,query_blocks_mean,query_levels_mean,\
             scan_bound_violations,promotions,subdivisions,oversized_dense,\
             low_lead_pieces\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{:.4},{},{},{},{:.4},{:.4},{:.2},{:.2},{:.2},{},{},{},{},{}\n",
                r.n,
                r.n_v,
                r.stored_elements,
                r.space_ratio,
                r.level_count,
                r.update_blocks,
                r.update_blocks_no_aux,
                r.amortized_blocks,
                r.amortized_blocks_no_aux,
                r.query_z_mean,
                r.query_blocks_mean,
                r.query_levels_mean,
                r.scan_bound_violations,
                r.promotions,
                r.subdivisions,
                r.oversized_dense,
                r.low_lead_pieces,
            ));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// How many key-disjoint ranges each checkpoint measures, and the result
/// size they aim for. The target shrinks on small dictionaries so ranges
/// stay disjoint.
pub const QUERY_RANGES: u64 = 64;
pub const QUERY_TARGET_Z: u64 = 128;

/// Key-disjoint query ranges at the given version: the key space is cut
/// into equal strata, one range per stratum, sized so the expected number
/// of live keys per range is the target Z.
fn disjoint_ranges(spec: &WorkloadSpec, n_v: u64, seed: u64) -> Vec<(u64, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strata = QUERY_RANGES.min(spec.key_space).max(1);
    let stratum = spec.key_space / strata;
    let target_z = QUERY_TARGET_Z.min((n_v / strata).max(1));
    // Expected live keys per unit of key space.
    let density = (n_v as f64 / spec.key_space as f64).max(f64::MIN_POSITIVE);
    let width = ((target_z as f64 / density).ceil() as u64).clamp(1, stratum.max(1));
    (0..strata)
        .map(|i| {
            let lo_base = i * stratum;
            let slack = stratum.saturating_sub(width);
            let lo = lo_base + if slack > 0 { rng.gen_range(0..=slack) } else { 0 };
            (lo, lo + width - 1)
        })
        .collect()
}

/// Run the workload, measuring at each checkpoint (ascending update counts;
/// the final n_updates is always included).
pub fn run_workload(
    spec: &WorkloadSpec,
    config: EngineConfig,
    checkpoints: &[u64],
) -> Result<MetricsReport> {
    let updates = spec.generate()?;
    let mut marks: Vec<u64> = checkpoints
        .iter()
        .copied()
        .filter(|&c| c > 0 && c <= spec.n_updates)
        .collect();
    marks.push(spec.n_updates);
    marks.sort_unstable();
    marks.dedup();

    let mut eng = Engine::new(config);
    let mut log = OracleLog::new();
    let mut rows = Vec::new();
    let mut next_mark = 0usize;
    for (i, &(key, payload)) in updates.iter().enumerate() {
        eng.update(key, payload)?;
        log.push(key, payload);
        let n = i as u64 + 1;
        if next_mark < marks.len() && marks[next_mark] == n {
            next_mark += 1;
            rows.push(measure_checkpoint(&mut eng, &log, spec, n)?);
        }
    }
    Ok(MetricsReport {
        spec: *spec,
        query_mode: eng.config().query_mode.name().into(),
        block_records: eng.config().block_records,
        rows,
        structure_digest: eng.structure_digest(),
    })
}

fn measure_checkpoint(
    eng: &mut Engine,
    log: &OracleLog,
    spec: &WorkloadSpec,
    n: u64,
) -> Result<CheckpointRow> {
    let n_v = log.n_v(Version(n))? as u64;
    let stored = eng.total_live_elements();
    let pre = eng.io_report();
    let ranges = disjoint_ranges(spec, n_v, spec.seed ^ n);
    let mut z_total = 0u64;
    let mut levels_total = 0usize;
    let mut scan_violations = 0u64;
    let mut examined: std::collections::HashMap<crate::engine::ArrayId, usize> =
        std::collections::HashMap::new();
    for &(k1, k2) in &ranges {
        let r = eng.range_query(Version(n), k1, k2)?;
        z_total += r.entries.len() as u64;
        levels_total += r.stats.levels_visited;
        for s in &r.stats.scans {
            *examined.entry(s.array).or_default() += s.examined;
        }
    }
    // Scan-cost bound: summed over key-disjoint ranges at one version, the
    // elements examined in any one array never exceed that array's size.
    for (id, ex) in examined {
        let len = eng.record(id).map(|r| r.array.len()).unwrap_or(0);
        if ex > len {
            scan_violations += 1;
        }
    }
    let post = eng.io_report();
    let query_blocks = post.query_blocks() - pre.query_blocks();
    let nq = ranges.len() as f64;
    let stats = eng.stats();
    Ok(CheckpointRow {
        n,
        n_v,
        stored_elements: stored,
        space_ratio: stored as f64 / n as f64,
        level_count: eng.level_count(),
        update_blocks: pre.update_blocks(true),
        update_blocks_no_aux: pre.update_blocks(false),
        amortized_blocks: pre.update_blocks(true) as f64 / n as f64,
        amortized_blocks_no_aux: pre.update_blocks(false) as f64 / n as f64,
        query_z_mean: z_total as f64 / nq,
        query_blocks_mean: query_blocks as f64 / nq,
        query_levels_mean: levels_total as f64 / nq,
        scan_bound_violations: scan_violations,
        promotions: stats.promotions,
        subdivisions: stats.subdivisions,
        oversized_dense: stats.oversized_dense,
        low_lead_pieces: stats.low_lead_pieces,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyOutcome {
    pub pass: bool,
    pub versions_checked: u64,
    pub queries_checked: u64,
    pub failures: Vec<String>,
}

/// Replay the workload with invariant checks on, then compare the engine
/// against the oracle: every version (sampled down to `max_versions` for
/// large runs) with several ranges each, plus the deep structural sweep.
pub fn verify_workload(
    spec: &WorkloadSpec,
    config: EngineConfig,
    max_versions: u64,
) -> Result<VerifyOutcome> {
    let updates = spec.generate()?;
    let config = EngineConfig { invariant_checks: true, ..config };
    let mut eng = Engine::new(config);
    let mut log = OracleLog::new();
    let mut failures = Vec::new();
    for &(key, payload) in &updates {
        if let Err(e) = eng.update(key, payload) {
            return Ok(VerifyOutcome {
                pass: false,
                versions_checked: 0,
                queries_checked: 0,
                failures: vec![format!("update {}: {e}", log.latest().0 + 1)],
            });
        }
        log.push(key, payload);
    }
    if let Err(e) = eng.check_invariants() {
        failures.push(format!("invariant sweep: {e}"));
    }
    let inserted: Vec<_> = log.updates().map(|(k, v, _)| (k, v)).collect();
    if let Err(e) = eng.verify_deep(&inserted) {
        failures.push(format!("deep verification: {e}"));
    }

    let latest = log.latest().0;
    let step = (latest / max_versions.max(1)).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9e3779b9));
    let mut versions = 0u64;
    let mut queries = 0u64;
    let mut v = 1;
    while v <= latest {
        versions += 1;
        let mut ranges = vec![(0u64, u64::MAX)];
        for _ in 0..3 {
            let a = rng.gen_range(0..spec.key_space);
            let b = rng.gen_range(0..spec.key_space);
            ranges.push((a.min(b), a.max(b)));
        }
        for (k1, k2) in ranges {
            queries += 1;
            let got = eng.range_query(Version(v), k1, k2)?;
            let want = log.query(Version(v), k1, k2)?;
            if got.entries != want {
                failures.push(format!(
                    "v={v} range [{k1}, {k2}]: engine returned {} entries, oracle {}",
                    got.entries.len(),
                    want.len()
                ));
                if failures.len() > 20 {
                    break;
                }
            }
        }
        v += step;
    }
    Ok(VerifyOutcome {
        pass: failures.is_empty(),
        versions_checked: versions,
        queries_checked: queries,
        failures,
    })
}

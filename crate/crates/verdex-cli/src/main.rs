//! Command-line harness for the versioned index: benchmark runs, oracle
//! verification, snapshot queries, and structure dumps.
//!
//! Exit code 0 on success / pass, 1 on failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use verdex::{
    run_workload, snapshot, verify_workload, Engine, EngineConfig, KeyDist, QueryMode, Version,
    WorkloadSpec,
};

#[derive(Parser)]
#[command(name = "verdex", about = "Versioned index benchmark and verification harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SpecArgs {
    /// Number of updates to apply.
    #[arg(long, default_value_t = 4096)]
    n_updates: u64,
    /// Key distribution: uniform, zipf:<s>, or sequential.
    #[arg(long, default_value = "uniform")]
    key_dist: String,
    /// Size of the key space.
    #[arg(long, default_value_t = 1 << 16)]
    key_space: u64,
    /// Fraction of updates that are deletes.
    #[arg(long, default_value_t = 0.1)]
    tombstone_frac: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Path to a key=value engine config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Query mode: aux_index or succ_pointers.
    #[arg(long)]
    query_mode: Option<String>,
    /// Block size B, in records.
    #[arg(long)]
    block_records: Option<usize>,
    /// Cache size M, in blocks.
    #[arg(long)]
    cache_blocks: Option<usize>,
    /// Run with per-operation invariant checking.
    #[arg(long)]
    invariant_checks: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a workload and emit a metrics report.
    Run {
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoints (update counts) to measure at; the final count is
        /// always included.
        #[arg(long, value_delimiter = ',')]
        checkpoints: Vec<u64>,
        /// Write the report as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the report as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Save the final engine state as a snapshot.
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Replay a workload with full invariant checks and oracle comparison.
    Verify {
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        config: ConfigArgs,
        /// Cap on the number of versions to cross-check.
        #[arg(long, default_value_t = 256)]
        max_versions: u64,
    },
    /// Range-query a saved snapshot.
    Query {
        /// Snapshot file produced by `run --snapshot`.
        snapshot: PathBuf,
        /// Version to query (defaults to the latest).
        #[arg(long)]
        version: Option<u64>,
        #[arg(long, default_value_t = 0)]
        k1: u64,
        #[arg(long, default_value_t = u64::MAX)]
        k2: u64,
    },
    /// Pretty-print the level structure of a saved snapshot.
    Dump { snapshot: PathBuf },
}

fn parse_key_dist(s: &str) -> Result<KeyDist, String> {
    if s == "uniform" {
        return Ok(KeyDist::Uniform);
    }
    if s == "sequential" {
        return Ok(KeyDist::Sequential);
    }
    if let Some(exp) = s.strip_prefix("zipf:") {
        let exp: f64 = exp.parse().map_err(|_| format!("bad zipf exponent {exp:?}"))?;
        return Ok(KeyDist::Zipf(exp));
    }
    Err(format!("unknown key distribution {s:?} (uniform | zipf:<s> | sequential)"))
}

fn build_spec(a: &SpecArgs) -> Result<WorkloadSpec, String> {
    Ok(WorkloadSpec {
        n_updates: a.n_updates,
        key_dist: parse_key_dist(&a.key_dist)?,
        key_space: a.key_space,
        tombstone_frac: a.tombstone_frac,
        seed: a.seed,
    })
}

fn build_config(a: &ConfigArgs) -> Result<EngineConfig, String> {
    let mut cfg = match &a.config {
        Some(path) => EngineConfig::load(path).map_err(|e| e.to_string())?,
        None => EngineConfig::default(),
    };
    if let Some(mode) = &a.query_mode {
        cfg.query_mode = match mode.as_str() {
            "aux_index" => QueryMode::AuxIndex,
            "succ_pointers" => QueryMode::SuccPointers,
            other => return Err(format!("unknown query mode {other:?}")),
        };
    }
    if let Some(b) = a.block_records {
        cfg.block_records = b;
    }
    if let Some(m) = a.cache_blocks {
        cfg.cache_blocks = m;
    }
    if a.invariant_checks {
        cfg.invariant_checks = true;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Run { spec, config, checkpoints, csv, json, snapshot: snap } => {
            let spec = build_spec(&spec)?;
            let cfg = build_config(&config)?;
            let report = run_workload(&spec, cfg, &checkpoints).map_err(|e| e.to_string())?;
            if let Some(path) = &csv {
                std::fs::write(path, report.to_csv()).map_err(|e| e.to_string())?;
            }
            if let Some(path) = &json {
                std::fs::write(path, report.to_json()).map_err(|e| e.to_string())?;
            }
            if csv.is_none() && json.is_none() {
                print!("{}", report.to_csv());
            }
            if let Some(path) = &snap {
                // Re-run to materialize final state; run_workload consumed it.
                let mut eng = Engine::new(cfg);
                for (k, p) in spec.generate().map_err(|e| e.to_string())? {
                    eng.update(k, p).map_err(|e| e.to_string())?;
                }
                snapshot::save(&eng, path).map_err(|e| e.to_string())?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { spec, config, max_versions } => {
            let spec = build_spec(&spec)?;
            let cfg = build_config(&config)?;
            let out = verify_workload(&spec, cfg, max_versions).map_err(|e| e.to_string())?;
            println!(
                "{} — {} versions, {} queries checked",
                if out.pass { "PASS" } else { "FAIL" },
                out.versions_checked,
                out.queries_checked
            );
            for f in &out.failures {
                eprintln!("  {f}");
            }
            Ok(if out.pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Query { snapshot: path, version, k1, k2 } => {
            let eng = snapshot::load(&path).map_err(|e| e.to_string())?;
            let v = version.unwrap_or(eng.latest_version().0);
            let result = eng.range_query(Version(v), k1, k2).map_err(|e| e.to_string())?;
            println!("{}", serde_json::to_string_pretty(&result).map_err(|e| e.to_string())?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Dump { snapshot: path } => {
            let eng = snapshot::load(&path).map_err(|e| e.to_string())?;
            print!("{}", eng.dump());
            Ok(ExitCode::SUCCESS)
        }
    }
}

//! Engine configuration, loadable from a plain-text `key=value` file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryMode {
    AuxIndex,
    SuccPointers,
}

impl QueryMode {
    pub fn name(self) -> &'static str {
        match self {
            QueryMode::AuxIndex => "aux_index",
            QueryMode::SuccPointers => "succ_pointers",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub query_mode: QueryMode,
    pub invariant_checks: bool,
    /// Block size B, in records. Forwarded to the IO model only.
    pub block_records: usize,
    /// Cache size M, in blocks. Forwarded to the IO model only.
    pub cache_blocks: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            query_mode: QueryMode::AuxIndex,
            invariant_checks: false,
            block_records: 64,
            cache_blocks: 256,
        }
    }
}

impl EngineConfig {
    pub fn parse(text: &str) -> Result<EngineConfig> {
        let mut cfg = EngineConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "query_mode" => {
                    cfg.query_mode = match value {
                        "aux_index" => QueryMode::AuxIndex,
                        "succ_pointers" => QueryMode::SuccPointers,
                        _ => return Err(Error::Config(format!("unknown query_mode {value:?}"))),
                    }
                }
                "invariant_checks" => {
                    cfg.invariant_checks = match value {
                        "on" | "true" | "1" => true,
                        "off" | "false" | "0" => false,
                        _ => return Err(Error::Config(format!("bad invariant_checks {value:?}"))),
                    }
                }
                "block_records" => {
                    cfg.block_records = value
                        .parse()
                        .map_err(|_| Error::Config(format!("bad block_records {value:?}")))?;
                }
                "cache_blocks" => {
                    cfg.cache_blocks = value
                        .parse()
                        .map_err(|_| Error::Config(format!("bad cache_blocks {value:?}")))?;
                }
                _ => return Err(Error::Config(format!("unknown key {key:?}"))),
            }
        }
        if cfg.block_records == 0 || cfg.cache_blocks == 0 {
            return Err(Error::Config("block_records and cache_blocks must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<EngineConfig> {
        EngineConfig::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_key_value_text() {
        let cfg = EngineConfig::parse(
            "# comment\nquery_mode = succ_pointers\ninvariant_checks=on\nblock_records=16\n",
        )
        .unwrap();
        assert_eq!(cfg.query_mode, QueryMode::SuccPointers);
        assert!(cfg.invariant_checks);
        assert_eq!(cfg.block_records, 16);
        assert_eq!(cfg.cache_blocks, 256);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(EngineConfig::parse("frobnicate=1").is_err());
        assert!(EngineConfig::parse("query_mode=psychic").is_err());
    }
}

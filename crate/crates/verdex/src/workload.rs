//! Deterministic workload generation for benchmarks and verification runs.
//! The seed fully determines the update sequence.

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::element::{Key, Payload, PAYLOAD_LEN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KeyDist {
    /// Keys drawn uniformly from [0, key_space).
    Uniform,
    /// Zipf-distributed ranks over [0, key_space) with the given exponent.
    Zipf(f64),
    /// Key i at update i, wrapping at key_space.
    Sequential,
}

impl KeyDist {
    pub fn name(&self) -> String {
        match self {
            KeyDist::Uniform => "uniform".into(),
            KeyDist::Zipf(s) => format!("zipf({s})"),
            KeyDist::Sequential => "sequential".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub n_updates: u64,
    pub key_dist: KeyDist,
    pub key_space: u64,
    /// Fraction of updates that are tombstones, in [0, 1].
    pub tombstone_frac: f64,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.key_space == 0 {
            return Err(Error::Config("key_space must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.tombstone_frac) {
            return Err(Error::Config("tombstone_frac must be in [0, 1]".into()));
        }
        if let KeyDist::Zipf(s) = self.key_dist {
            if s <= 0.0 {
                return Err(Error::Config("zipf exponent must be positive".into()));
            }
        }
        Ok(())
    }

    /// Materialize the update sequence. Version of entry i is i+1.
    pub fn generate(&self) -> Result<Vec<(Key, Option<Payload>)>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let zipf = match self.key_dist {
            KeyDist::Zipf(s) => Some(
                rand_distr::Zipf::new(self.key_space, s)
                    .map_err(|e| Error::Config(format!("zipf: {e}")))?,
            ),
            _ => None,
        };
        let mut out = Vec::with_capacity(self.n_updates as usize);
        for i in 0..self.n_updates {
            let key: Key = match self.key_dist {
                KeyDist::Uniform => rng.gen_range(0..self.key_space),
                // Zipf samples ranks in [1, key_space]; shift to [0, key_space).
                KeyDist::Zipf(_) => zipf.unwrap().sample(&mut rng) as u64 - 1,
                KeyDist::Sequential => i % self.key_space,
            };
            let tombstone = rng.gen_bool(self.tombstone_frac);
            let payload = if tombstone {
                None
            } else {
                let mut p = [0u8; PAYLOAD_LEN];
                rng.fill(&mut p[..]);
                Some(p)
            };
            out.push((key, payload));
        }
        Ok(out)
    }
}

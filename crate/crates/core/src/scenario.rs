use serde::{Deserialize, Serialize};

use crate::env::{EnvParams, SliceCatalog, SlicingEnv};
use crate::error::Result;
use crate::protocol::Vocabulary;
use crate::seeding::{stream_rng, Stream};

/// Everything that fixes the shape of one simulated system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub env: EnvParams,
    pub catalog: SliceCatalog,
    pub vocab: Vocabulary,
    pub history_len: usize,
}

impl Scenario {
    /// Default ranges, log-spaced catalog of `num_slices`, vocabulary the size
    /// of the catalog and a history of 3.
    pub fn standard(num_mds: usize, num_slices: usize) -> Result<Self> {
        Ok(Self {
            env: EnvParams {
                num_mds,
                ..EnvParams::default()
            },
            catalog: SliceCatalog::log_spaced(num_slices)?,
            vocab: Vocabulary::new(num_slices.max(2))?,
            history_len: 3,
        })
    }

    pub fn num_mds(&self) -> usize {
        self.env.num_mds
    }

    pub fn num_slices(&self) -> usize {
        self.catalog.len()
    }

    pub fn build_env(&self, seed: u64) -> Result<SlicingEnv> {
        SlicingEnv::with_rng(
            self.env.clone(),
            self.catalog.clone(),
            stream_rng(seed, Stream::Env),
        )
    }
}

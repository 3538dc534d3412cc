//! Experiment configuration file (TOML, schema version 1).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::config::TrainConfig;
use crate::env::{EnvParams, IntentRanges, SliceCatalog, SliceSpec};
use crate::error::{Error, Result};
use crate::protocol::Vocabulary;
use crate::scenario::Scenario;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Proposed,
    Perfect,
    Random,
    SelfLearning,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::Proposed,
        Scheme::Perfect,
        Scheme::Random,
        Scheme::SelfLearning,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Perfect => "perfect",
            Scheme::Random => "random",
            Scheme::SelfLearning => "self-learning",
        }
    }

    pub fn learns(self) -> bool {
        matches!(self, Scheme::Proposed | Scheme::SelfLearning)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme {s:?}; expected one of proposed, perfect, random, self-learning")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub num_mds: usize,
    /// Size of the generated log-spaced catalog when `catalog` is absent.
    pub num_slices: usize,
    pub episode_len: usize,
    pub history_len: usize,
    pub reward_rho: f64,
    /// Uplink vocabulary size; defaults to the number of slices.
    pub vocab_size: Option<usize>,
    pub ranges: IntentRanges,
    pub catalog: Option<Vec<SliceSpec>>,
}

impl Default for EnvSection {
    fn default() -> Self {
        let p = EnvParams::default();
        Self {
            num_mds: p.num_mds,
            num_slices: 10,
            episode_len: p.episode_len,
            history_len: 3,
            reward_rho: p.reward_rho,
            vocab_size: None,
            ranges: p.ranges,
            catalog: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub schemes: Vec<Scheme>,
    pub seeds: Vec<u64>,
    pub test_episodes: usize,
    pub out_dir: PathBuf,
    /// Trailing training episodes averaged into the summary.
    pub train_tail: usize,
    /// Cells run concurrently; 1 is the deterministic single-threaded reference.
    pub jobs: usize,
    pub write_checkpoints: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            schemes: Scheme::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            test_episodes: 500,
            out_dir: PathBuf::from("runs/default"),
            train_tail: 100,
            jobs: 1,
            write_checkpoints: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub env: EnvSection,
    pub train: TrainConfig,
    pub run: RunSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            env: EnvSection::default(),
            train: TrainConfig::default(),
            run: RunSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let e = &self.env;
        let catalog = match &e.catalog {
            Some(slices) => SliceCatalog::new(slices.clone())?,
            None => SliceCatalog::log_spaced(e.num_slices)?,
        };
        let vocab = Vocabulary::new(e.vocab_size.unwrap_or(catalog.len()))?;
        Ok(Scenario {
            env: EnvParams {
                num_mds: e.num_mds,
                episode_len: e.episode_len,
                reward_rho: e.reward_rho,
                ranges: e.ranges,
            },
            catalog,
            vocab,
            history_len: e.history_len,
        })
    }

    /// Checks everything that could otherwise fail mid-run.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        let e = &self.env;
        if e.num_mds == 0 || e.episode_len == 0 {
            return Err(Error::Config("num_mds and episode_len must be >= 1".into()));
        }
        if !(e.reward_rho > 0.0) {
            return Err(Error::Config("reward_rho must be positive".into()));
        }
        e.ranges.validate().map_err(into_config)?;
        let scenario = self.scenario().map_err(into_config)?;
        scenario
            .catalog
            .check_coverage(&scenario.env.ranges)
            .map_err(into_config)?;
        self.train.validate(e.episode_len).map_err(into_config)?;
        let r = &self.run;
        if r.schemes.is_empty() || r.seeds.is_empty() {
            return Err(Error::Config(
                "run.schemes and run.seeds must be non-empty".into(),
            ));
        }
        if r.jobs == 0 {
            return Err(Error::Config("run.jobs must be >= 1".into()));
        }
        Ok(())
    }
}

fn into_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

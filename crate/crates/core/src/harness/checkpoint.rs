//! Serializable runners and versioned checkpoint files.
//!
//! A checkpoint holds the whole runner: parameters, optimizer moments,
//! environment RNG position, agent RNG position, partially filled rollout
//! buffer and histories. Floats are written in shortest round-trip form and
//! parsed back exactly, so a restored runner continues bit-identically.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Scheme;
use crate::baselines::{BaselineKind, FixedPolicyRunner, SelfLearningTrainer};
use crate::engine::config::TrainConfig;
use crate::engine::ProposedTrainer;
use crate::env::EpisodeStats;
use crate::error::{Error, Result};
use crate::scenario::Scenario;

pub const CHECKPOINT_FORMAT: &str = "intent-emcom-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Runner {
    Proposed(Box<ProposedTrainer>),
    SelfLearning(Box<SelfLearningTrainer>),
    Fixed(Box<FixedPolicyRunner>),
}

impl Runner {
    pub fn new(scheme: Scheme, scenario: Scenario, train: &TrainConfig, seed: u64) -> Result<Self> {
        Ok(match scheme {
            Scheme::Proposed => Runner::Proposed(Box::new(ProposedTrainer::new(
                scenario,
                train.clone(),
                seed,
            )?)),
            Scheme::SelfLearning => Runner::SelfLearning(Box::new(SelfLearningTrainer::new(
                scenario,
                train.clone(),
                seed,
            )?)),
            Scheme::Perfect => Runner::Fixed(Box::new(FixedPolicyRunner::new(
                BaselineKind::PerfectKnowledge,
                scenario,
                seed,
            )?)),
            Scheme::Random => Runner::Fixed(Box::new(FixedPolicyRunner::new(
                BaselineKind::RandomAssignment,
                scenario,
                seed,
            )?)),
        })
    }

    /// `learn = false` is the greedy test mode; fixed policies ignore the flag.
    pub fn run_episode(&mut self, learn: bool) -> Result<EpisodeStats> {
        match self {
            Runner::Proposed(t) => t.run_episode(learn),
            Runner::SelfLearning(t) => t.run_episode(learn),
            Runner::Fixed(r) => r.run_episode(),
        }
    }

    pub fn episodes_trained(&self) -> usize {
        match self {
            Runner::Proposed(t) => t.episodes_trained(),
            Runner::SelfLearning(t) => t.episodes_trained(),
            Runner::Fixed(_) => 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub scheme: Scheme,
    pub seed: u64,
    pub episodes_trained: usize,
    pub runner: Runner,
}

impl Checkpoint {
    pub fn new(scheme: Scheme, seed: u64, runner: Runner) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            scheme,
            seed,
            episodes_trained: runner.episodes_trained(),
            runner,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("malformed checkpoint: {e}")))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}, expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}",
                ck.format, ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read checkpoint {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training hyperparameters shared by the proposed scheme and the
/// self-selection baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub minibatch: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub learning_rate: f64,
    pub adam_eps: f64,
    pub epochs_per_update: usize,
    pub episodes_per_update: usize,
    pub hidden: Vec<usize>,
    pub standardize_advantages: bool,
    /// One policy for all MDs instead of one per MD.
    pub share_md_params: bool,
    /// Append the previous step's joint actions (one-hot) to the critic input.
    pub critic_prev_actions: bool,
    /// Optional global gradient-norm clip per network.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 6000,
            minibatch: 64,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            value_coef: 0.2,
            entropy_coef: 0.2,
            learning_rate: 1e-3,
            adam_eps: 1e-5,
            epochs_per_update: 4,
            episodes_per_update: 8,
            hidden: vec![64, 64],
            standardize_advantages: true,
            share_md_params: false,
            critic_prev_actions: false,
            max_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, episode_len: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad(format!(
                "gae_lambda must be in (0, 1], got {}",
                self.gae_lambda
            ));
        }
        if !(self.clip_eps > 0.0) {
            return bad(format!("clip_eps must be positive, got {}", self.clip_eps));
        }
        if !(self.learning_rate >= 0.0) || !(self.adam_eps > 0.0) {
            return bad("learning_rate must be >= 0 and adam_eps > 0".into());
        }
        if !(self.value_coef >= 0.0 && self.entropy_coef >= 0.0) {
            return bad("loss coefficients must be non-negative".into());
        }
        if self.epochs_per_update == 0 || self.episodes_per_update == 0 || self.minibatch == 0 {
            return bad("epochs_per_update, episodes_per_update and minibatch must be >= 1".into());
        }
        let window = self.episodes_per_update * episode_len;
        if self.minibatch > window {
            return bad(format!(
                "minibatch {} exceeds the update window of {window} steps",
                self.minibatch
            ));
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        if let Some(g) = self.max_grad_norm {
            if !(g > 0.0) {
                return bad("max_grad_norm must be positive".into());
            }
        }
        Ok(())
    }
}

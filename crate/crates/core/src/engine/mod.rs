//! Numerical core: networks, optimizer, policy distributions, advantage
//! estimation, PPO losses and the multi-agent training loop.

pub mod adam;
pub mod config;
pub mod dist;
pub mod gae;
pub mod loss;
pub mod mappo;
pub mod nn;
pub mod ppo;

pub use adam::{AdamParams, AdamState};
pub use config::TrainConfig;
pub use dist::{categorical_sample_and_logprob, Categorical};
pub use gae::compute_gae;
pub use loss::{clipped_objective, critic_loss, ppo_actor_loss};
pub use mappo::{mappo_update, MappoAgents, ProposedTrainer, RolloutBuffer, UpdateStats};
pub use nn::{Dense, ForwardCache, Mlp, MlpGrads};
pub use ppo::{Actor, ActorSample, ActorStats, Critic};

//! Multi-agent PPO for the communicating system: one policy per MD choosing
//! uplink symbols, one network policy applied per MD channel choosing slices,
//! and a centralized critic on the joint observation.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamParams;
use super::config::TrainConfig;
use super::gae::{compute_gae, standardize};
use super::ppo::{minibatches, Actor, ActorSample, ActorStats, Critic};
use crate::env::{Allocation, EpisodeStats, SlicingEnv, StepOutcome};
use crate::error::{Error, Result};
use crate::protocol::{
    build_md_observation, build_net_observation, encode_intent_features, exchange_round, md_layout,
    net_channel_layout, HistoryBuffer, INTENT_FEATURES,
};
use crate::scenario::Scenario;
use crate::seeding::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappoAgents {
    /// One actor per MD, or a single shared actor.
    pub md_actors: Vec<Actor>,
    pub net_actor: Actor,
    pub critic: Critic,
}

impl MappoAgents {
    pub fn md_actor(&self, md: usize) -> &Actor {
        &self.md_actors[md.min(self.md_actors.len() - 1)]
    }

    pub fn shares_md_params(&self) -> bool {
        self.md_actors.len() == 1
    }

    pub fn is_finite(&self) -> bool {
        self.md_actors.iter().all(|a| a.net.is_finite())
            && self.net_actor.net.is_finite()
            && self.critic.net.is_finite()
    }
}

/// Everything recorded for one environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub md: Vec<ActorSample>,
    pub net: ActorSample,
    pub critic_input: Vec<f64>,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RolloutBuffer {
    pub steps: Vec<StepRecord>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn clear(&mut self) {
        self.steps.clear();
    }

    /// Advantages and returns of the team reward, one per step.
    pub fn advantages(&self, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let rewards: Vec<f64> = self.steps.iter().map(|s| s.reward).collect();
        let values: Vec<f64> = self.steps.iter().map(|s| s.value).collect();
        let dones: Vec<bool> = self.steps.iter().map(|s| s.done).collect();
        compute_gae(&rewards, &values, &dones, 0.0, gamma, lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub md: ActorStats,
    pub net: ActorStats,
    pub critic_loss: f64,
    pub minibatches: usize,
    pub aborted: bool,
}

fn average(acc: &mut ActorStats, s: &ActorStats, k: f64) {
    acc.loss += s.loss * k;
    acc.entropy += s.entropy * k;
    acc.mean_ratio += s.mean_ratio * k;
    acc.clip_fraction += s.clip_fraction * k;
    acc.skipped += s.skipped;
}

/// PPO update over a full collection window. On a non-finite loss every
/// network is restored to its pre-update state and `aborted` is set.
pub fn mappo_update(
    agents: &mut MappoAgents,
    buffer: &mut RolloutBuffer,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    if buffer.is_empty() {
        return Err(Error::Contract(
            "update requested on an empty buffer".into(),
        ));
    }
    let snapshot = agents.clone();
    let result = run_epochs(agents, buffer, cfg, rng);
    buffer.clear();
    match result {
        Ok(stats) => Ok(stats),
        Err(Error::NonFinite(msg)) => {
            log::error!("aborting update, restoring parameters: {msg}");
            *agents = snapshot;
            Ok(UpdateStats {
                aborted: true,
                ..Default::default()
            })
        }
        Err(e) => Err(e),
    }
}

fn run_epochs(
    agents: &mut MappoAgents,
    buffer: &RolloutBuffer,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    let (mut adv, returns) = buffer.advantages(cfg.gamma, cfg.gae_lambda)?;
    if cfg.standardize_advantages {
        standardize(&mut adv);
    }
    let num_mds = buffer.steps[0].md.len();
    let mut stats = UpdateStats::default();
    let mut batches = 0usize;
    for _ in 0..cfg.epochs_per_update {
        for mb in minibatches(buffer.len(), cfg.minibatch, rng) {
            let mb_adv: Vec<f64> = mb.iter().map(|&i| adv[i]).collect();

            let mut md_stats = ActorStats::default();
            if agents.shares_md_params() {
                let samples: Vec<&ActorSample> = (0..num_mds)
                    .flat_map(|n| mb.iter().map(move |&i| (n, i)))
                    .map(|(n, i)| &buffer.steps[i].md[n])
                    .collect();
                let advs: Vec<f64> = (0..num_mds).flat_map(|_| mb_adv.iter().copied()).collect();
                let (g, s) = agents.md_actors[0].gradients(
                    &samples,
                    &advs,
                    cfg.clip_eps,
                    cfg.entropy_coef,
                )?;
                agents.md_actors[0].apply(g, cfg.max_grad_norm);
                md_stats = s;
            } else {
                for n in 0..num_mds {
                    let samples: Vec<&ActorSample> =
                        mb.iter().map(|&i| &buffer.steps[i].md[n]).collect();
                    let (g, s) = agents.md_actors[n].gradients(
                        &samples,
                        &mb_adv,
                        cfg.clip_eps,
                        cfg.entropy_coef,
                    )?;
                    agents.md_actors[n].apply(g, cfg.max_grad_norm);
                    average(&mut md_stats, &s, 1.0 / num_mds as f64);
                }
            }

            let samples: Vec<&ActorSample> = mb.iter().map(|&i| &buffer.steps[i].net).collect();
            let (g, net_stats) =
                agents
                    .net_actor
                    .gradients(&samples, &mb_adv, cfg.clip_eps, cfg.entropy_coef)?;
            agents.net_actor.apply(g, cfg.max_grad_norm);

            let inputs: Vec<&[f64]> = mb
                .iter()
                .map(|&i| buffer.steps[i].critic_input.as_slice())
                .collect();
            let rets: Vec<f64> = mb.iter().map(|&i| returns[i]).collect();
            let (g, closs) = agents.critic.gradients(&inputs, &rets, cfg.value_coef)?;
            agents.critic.apply(g, cfg.max_grad_norm);

            average(&mut stats.md, &md_stats, 1.0);
            average(&mut stats.net, &net_stats, 1.0);
            stats.critic_loss += closs;
            batches += 1;
        }
    }
    let k = 1.0 / batches.max(1) as f64;
    for s in [&mut stats.md, &mut stats.net] {
        s.loss *= k;
        s.entropy *= k;
        s.mean_ratio *= k;
        s.clip_fraction *= k;
    }
    stats.critic_loss *= k;
    stats.minibatches = batches;
    if !agents.is_finite() {
        return Err(Error::NonFinite("parameters after update".into()));
    }
    Ok(stats)
}

/// Width of the centralized critic input.
pub fn critic_input_dim(scenario: &Scenario, prev_actions: bool) -> usize {
    let n = scenario.num_mds();
    let u = scenario.vocab.uplink_size();
    let m = scenario.num_slices();
    let md = md_layout(scenario.history_len, &scenario.vocab).dim();
    let chan = net_channel_layout(scenario.history_len, &scenario.vocab, m).dim() - u;
    n * (md + chan) + if prev_actions { n * (u + m) } else { 0 }
}

/// Joint critic input: every MD observation, then every network channel
/// without its current-uplink block, then optionally the previous step's
/// messages and slices as one-hots.
pub fn build_critic_input(
    md_obs: &[Vec<f64>],
    net_obs: &[Vec<f64>],
    uplink_size: usize,
    prev_actions: Option<(&[usize], &[usize], usize)>,
) -> Vec<f64> {
    let mut out: Vec<f64> = md_obs.iter().flatten().copied().collect();
    for chan in net_obs {
        out.extend_from_slice(&chan[uplink_size..]);
    }
    if let Some((msgs, slices, num_slices)) = prev_actions {
        for &u in msgs {
            out.extend((0..uplink_size).map(|k| if k == u { 1.0 } else { 0.0 }));
        }
        for &s in slices {
            out.extend((0..num_slices).map(|k| if k == s { 1.0 } else { 0.0 }));
        }
    }
    out
}

/// The communicating scheme: environment, histories, agents and their rollout
/// state. Fully serializable, so a checkpoint resumes the exact stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProposedTrainer {
    pub scenario: Scenario,
    pub config: TrainConfig,
    env: SlicingEnv,
    histories: Vec<HistoryBuffer>,
    pub agents: MappoAgents,
    rng: ChaCha8Rng,
    buffer: RolloutBuffer,
    prev_actions: Option<(Vec<usize>, Vec<usize>)>,
    episodes_trained: usize,
    last_update: Option<UpdateStats>,
}

impl ProposedTrainer {
    pub fn new(scenario: Scenario, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate(scenario.env.episode_len)?;
        let env = scenario.build_env(seed)?;
        let mut rng = stream_rng(seed, Stream::Agents);
        let adam = AdamParams {
            lr: config.learning_rate,
            eps: config.adam_eps,
            ..AdamParams::default()
        };
        let n = scenario.num_mds();
        let u = scenario.vocab.uplink_size();
        let m = scenario.num_slices();
        let md_dim = md_layout(scenario.history_len, &scenario.vocab).dim();
        let chan_dim = net_channel_layout(scenario.history_len, &scenario.vocab, m).dim();
        let md_count = if config.share_md_params { 1 } else { n };
        let md_actors = (0..md_count)
            .map(|_| Actor::new(md_dim, &config.hidden, u, adam, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let net_actor = Actor::new(chan_dim, &config.hidden, m, adam, &mut rng)?;
        let critic = Critic::new(
            critic_input_dim(&scenario, config.critic_prev_actions),
            &config.hidden,
            adam,
            &mut rng,
        )?;
        Ok(Self {
            histories: vec![HistoryBuffer::new(scenario.history_len); n],
            scenario,
            config,
            env,
            agents: MappoAgents {
                md_actors,
                net_actor,
                critic,
            },
            rng,
            buffer: RolloutBuffer::default(),
            prev_actions: None,
            episodes_trained: 0,
            last_update: None,
        })
    }

    pub fn episodes_trained(&self) -> usize {
        self.episodes_trained
    }

    pub fn last_update(&self) -> Option<&UpdateStats> {
        self.last_update.as_ref()
    }

    pub fn buffered_steps(&self) -> usize {
        self.buffer.len()
    }

    /// One episode. With `learn`, actions are sampled, transitions stored and
    /// an update runs at the end of every collection window; without it,
    /// actions are greedy and nothing is stored.
    pub fn run_episode(&mut self, learn: bool) -> Result<EpisodeStats> {
        self.env.reset();
        self.histories.iter_mut().for_each(HistoryBuffer::reset);
        self.prev_actions = None;
        let mut stats = EpisodeStats::default();
        loop {
            let (outcome, done) = self.play_step(learn)?;
            stats.record(&outcome);
            if done {
                break;
            }
        }
        if learn {
            self.episodes_trained += 1;
            if self
                .episodes_trained
                .is_multiple_of(self.config.episodes_per_update)
            {
                self.last_update = Some(mappo_update(
                    &mut self.agents,
                    &mut self.buffer,
                    &self.config,
                    &mut self.rng,
                )?);
            }
        }
        Ok(stats)
    }

    fn play_step(&mut self, learn: bool) -> Result<(StepOutcome, bool)> {
        let greedy = !learn;
        let ranges = self.scenario.env.ranges;
        let feats: Vec<[f64; INTENT_FEATURES]> = self
            .env
            .intents()
            .iter()
            .map(|i| encode_intent_features(i, &ranges))
            .collect();
        let md_obs: Vec<Vec<f64>> = self
            .histories
            .iter()
            .zip(&feats)
            .map(|(h, f)| build_md_observation(h, f, &self.scenario.vocab))
            .collect();

        let mut msgs = Vec::with_capacity(md_obs.len());
        let mut md_samples = Vec::with_capacity(md_obs.len());
        for (n, obs) in md_obs.iter().enumerate() {
            let heads = vec![obs.clone()];
            let (a, lp, _) = self.agents.md_actor(n).act(&heads, &mut self.rng, greedy)?;
            msgs.push(a[0]);
            md_samples.push(ActorSample {
                heads,
                actions: a,
                old_log_prob: lp,
            });
        }

        let net_obs = build_net_observation(
            &self.histories,
            &msgs,
            &self.scenario.vocab,
            self.scenario.num_slices(),
        )?;
        let (slices, net_lp, _) = self.agents.net_actor.act(&net_obs, &mut self.rng, greedy)?;
        let allocation = Allocation::new(slices);

        let critic = if learn {
            let prev = self
                .prev_actions
                .clone()
                .unwrap_or_else(|| (vec![usize::MAX; msgs.len()], vec![usize::MAX; msgs.len()]));
            let input = build_critic_input(
                &md_obs,
                &net_obs,
                self.scenario.vocab.uplink_size(),
                self.config.critic_prev_actions.then_some((
                    prev.0.as_slice(),
                    prev.1.as_slice(),
                    self.scenario.num_slices(),
                )),
            );
            let value = self.agents.critic.value(&input)?;
            Some((input, value))
        } else {
            None
        };

        let (outcome, done) = self.env.step(&allocation)?;
        exchange_round(
            &mut self.histories,
            Some(&msgs),
            &allocation,
            &outcome,
            &feats,
        )?;

        if let Some((critic_input, value)) = critic {
            self.buffer.steps.push(StepRecord {
                md: md_samples,
                net: ActorSample {
                    heads: net_obs,
                    actions: allocation.slice_for_md.clone(),
                    old_log_prob: net_lp,
                },
                critic_input,
                value,
                reward: outcome.team_reward,
                done,
            });
        }
        self.prev_actions = Some((msgs, allocation.slice_for_md));
        Ok((outcome, done))
    }

    /// Greedy slice choice for each MD given its current intent, starting
    /// from empty histories. Used to inspect the learned protocol.
    pub fn greedy_messages(
        &self,
        features: &[[f64; INTENT_FEATURES]],
    ) -> Result<(Vec<usize>, Vec<usize>)> {
        let hist = vec![HistoryBuffer::new(self.scenario.history_len); features.len()];
        let mut msgs = Vec::with_capacity(features.len());
        for (n, (h, f)) in hist.iter().zip(features).enumerate() {
            let obs = build_md_observation(h, f, &self.scenario.vocab);
            msgs.push(self.agents.md_actor(n).distribution(&obs)?.mode());
        }
        let net_obs = build_net_observation(
            &hist,
            &msgs,
            &self.scenario.vocab,
            self.scenario.num_slices(),
        )?;
        let slices = net_obs
            .iter()
            .map(|o| Ok(self.agents.net_actor.distribution(o)?.mode()))
            .collect::<Result<Vec<_>>>()?;
        Ok((msgs, slices))
    }
}

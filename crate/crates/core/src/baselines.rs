//! Comparison schemes: oracle allocation with full intent knowledge, uniform
//! random allocation, and devices that learn to pick slices themselves
//! without exchanging messages.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::adam::AdamParams;
use crate::engine::config::TrainConfig;
use crate::engine::gae::{compute_gae, standardize};
use crate::engine::ppo::{minibatches, Actor, ActorSample, ActorStats, Critic};
use crate::env::{Allocation, EpisodeStats, IntentInstance, SliceCatalog, SlicingEnv};
use crate::error::{Error, Result};
use crate::protocol::{
    build_self_observation, encode_intent_features, exchange_round, self_selection_layout,
    HistoryBuffer,
};
use crate::scenario::Scenario;
use crate::seeding::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    PerfectKnowledge,
    RandomAssignment,
    SelfLearning,
}

/// For each MD, a slice drawn uniformly from those that satisfy its intent.
pub fn perfect_knowledge_allocate<R: Rng + ?Sized>(
    intents: &[IntentInstance],
    catalog: &SliceCatalog,
    rng: &mut R,
) -> Result<Allocation> {
    let slice_for_md = intents
        .iter()
        .enumerate()
        .map(|(n, intent)| {
            let feasible = catalog.feasible_indices(intent)?;
            if feasible.is_empty() {
                return Err(Error::Contract(format!(
                    "no slice satisfies the intent of md {n}; catalog does not cover the intent ranges"
                )));
            }
            Ok(feasible[rng.gen_range(0..feasible.len())])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Allocation::new(slice_for_md))
}

/// Independent uniform slice per MD.
pub fn random_allocate<R: Rng + ?Sized>(
    num_mds: usize,
    num_slices: usize,
    rng: &mut R,
) -> Allocation {
    Allocation::new(
        (0..num_mds)
            .map(|_| rng.gen_range(0..num_slices.max(1)))
            .collect(),
    )
}

/// A fixed (non-learning) allocation rule run against its own environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedPolicyRunner {
    pub kind: BaselineKind,
    pub scenario: Scenario,
    env: SlicingEnv,
    rng: ChaCha8Rng,
}

impl FixedPolicyRunner {
    pub fn new(kind: BaselineKind, scenario: Scenario, seed: u64) -> Result<Self> {
        if kind == BaselineKind::SelfLearning {
            return Err(Error::Contract(
                "self-learning is not a fixed policy".into(),
            ));
        }
        Ok(Self {
            kind,
            env: scenario.build_env(seed)?,
            scenario,
            rng: stream_rng(seed, Stream::Baseline),
        })
    }

    pub fn run_episode(&mut self) -> Result<EpisodeStats> {
        self.env.reset();
        let mut stats = EpisodeStats::default();
        loop {
            let allocation = match self.kind {
                BaselineKind::PerfectKnowledge => perfect_knowledge_allocate(
                    self.env.intents(),
                    self.env.catalog(),
                    &mut self.rng,
                )?,
                _ => random_allocate(self.env.num_mds(), self.env.catalog().len(), &mut self.rng),
            };
            let (outcome, done) = self.env.step(&allocation)?;
            stats.record(&outcome);
            if done {
                return Ok(stats);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SelfStep {
    sample: ActorSample,
    value: f64,
    reward: f64,
    done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfLearner {
    pub actor: Actor,
    pub critic: Critic,
}

/// Independent PPO learners, one per MD, each choosing its slice directly from
/// its own intent and its own allocation/success history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelfLearningTrainer {
    pub scenario: Scenario,
    pub config: TrainConfig,
    env: SlicingEnv,
    histories: Vec<HistoryBuffer>,
    pub learners: Vec<SelfLearner>,
    rng: ChaCha8Rng,
    buffers: Vec<Vec<SelfStep>>,
    episodes_trained: usize,
    last_stats: Option<ActorStats>,
}

impl SelfLearningTrainer {
    pub fn new(scenario: Scenario, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate(scenario.env.episode_len)?;
        let env = scenario.build_env(seed)?;
        let mut rng = stream_rng(seed, Stream::Agents);
        let adam = AdamParams {
            lr: config.learning_rate,
            eps: config.adam_eps,
            ..AdamParams::default()
        };
        let m = scenario.num_slices();
        let obs_dim = self_selection_layout(scenario.history_len, m).dim();
        let learners = (0..scenario.num_mds())
            .map(|_| {
                Ok(SelfLearner {
                    actor: Actor::new(obs_dim, &config.hidden, m, adam, &mut rng)?,
                    critic: Critic::new(obs_dim, &config.hidden, adam, &mut rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            histories: vec![HistoryBuffer::new(scenario.history_len); scenario.num_mds()],
            buffers: vec![Vec::new(); scenario.num_mds()],
            scenario,
            config,
            env,
            learners,
            rng,
            episodes_trained: 0,
            last_stats: None,
        })
    }

    pub fn episodes_trained(&self) -> usize {
        self.episodes_trained
    }

    pub fn last_stats(&self) -> Option<&ActorStats> {
        self.last_stats.as_ref()
    }

    pub fn run_episode(&mut self, learn: bool) -> Result<EpisodeStats> {
        self.env.reset();
        self.histories.iter_mut().for_each(HistoryBuffer::reset);
        let mut stats = EpisodeStats::default();
        let ranges = self.scenario.env.ranges;
        let m = self.scenario.num_slices();
        loop {
            let feats: Vec<_> = self
                .env
                .intents()
                .iter()
                .map(|i| encode_intent_features(i, &ranges))
                .collect();
            let mut slices = Vec::with_capacity(feats.len());
            let mut pending = Vec::with_capacity(feats.len());
            for (learner, (h, f)) in self.learners.iter().zip(self.histories.iter().zip(&feats)) {
                let obs = build_self_observation(h, f, m);
                let heads = vec![obs];
                let (a, lp, _) = learner.actor.act(&heads, &mut self.rng, !learn)?;
                let value = if learn {
                    learner.critic.value(&heads[0])?
                } else {
                    0.0
                };
                slices.push(a[0]);
                pending.push((
                    ActorSample {
                        heads,
                        actions: a,
                        old_log_prob: lp,
                    },
                    value,
                ));
            }
            let allocation = Allocation::new(slices);
            let (outcome, done) = self.env.step(&allocation)?;
            exchange_round(&mut self.histories, None, &allocation, &outcome, &feats)?;
            stats.record(&outcome);
            if learn {
                for (n, (sample, value)) in pending.into_iter().enumerate() {
                    self.buffers[n].push(SelfStep {
                        sample,
                        value,
                        reward: outcome.per_md_reward[n],
                        done,
                    });
                }
            }
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
                self.update()?;
            }
        }
        Ok(stats)
    }

    fn update(&mut self) -> Result<()> {
        let snapshot = self.learners.clone();
        let result = self.run_epochs();
        self.buffers.iter_mut().for_each(Vec::clear);
        match result {
            Ok(s) => {
                self.last_stats = Some(s);
                Ok(())
            }
            Err(Error::NonFinite(msg)) => {
                log::error!("aborting self-learning update, restoring parameters: {msg}");
                self.learners = snapshot;
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    fn run_epochs(&mut self) -> Result<ActorStats> {
        let cfg = &self.config;
        let mut per_md = Vec::with_capacity(self.buffers.len());
        for buf in &self.buffers {
            let rewards: Vec<f64> = buf.iter().map(|s| s.reward).collect();
            let values: Vec<f64> = buf.iter().map(|s| s.value).collect();
            let dones: Vec<bool> = buf.iter().map(|s| s.done).collect();
            let (mut adv, ret) =
                compute_gae(&rewards, &values, &dones, 0.0, cfg.gamma, cfg.gae_lambda)?;
            if cfg.standardize_advantages {
                standardize(&mut adv);
            }
            per_md.push((adv, ret));
        }
        let len = self.buffers[0].len();
        let mut mean = ActorStats::default();
        let mut count = 0.0;
        for _ in 0..cfg.epochs_per_update {
            for mb in minibatches(len, cfg.minibatch, &mut self.rng) {
                for ((learner, buf), (adv, ret)) in
                    self.learners.iter_mut().zip(&self.buffers).zip(&per_md)
                {
                    let samples: Vec<&ActorSample> = mb.iter().map(|&i| &buf[i].sample).collect();
                    let a: Vec<f64> = mb.iter().map(|&i| adv[i]).collect();
                    let (g, s) =
                        learner
                            .actor
                            .gradients(&samples, &a, cfg.clip_eps, cfg.entropy_coef)?;
                    learner.actor.apply(g, cfg.max_grad_norm);
                    let inputs: Vec<&[f64]> =
                        samples.iter().map(|s| s.heads[0].as_slice()).collect();
                    let r: Vec<f64> = mb.iter().map(|&i| ret[i]).collect();
                    let (g, _) = learner.critic.gradients(&inputs, &r, cfg.value_coef)?;
                    learner.critic.apply(g, cfg.max_grad_norm);
                    mean.loss += s.loss;
                    mean.entropy += s.entropy;
                    mean.mean_ratio += s.mean_ratio;
                    mean.clip_fraction += s.clip_fraction;
                    mean.skipped += s.skipped;
                    count += 1.0;
                }
            }
        }
        if self
            .learners
            .iter()
            .any(|l| !l.actor.net.is_finite() || !l.critic.net.is_finite())
        {
            return Err(Error::NonFinite(
                "self-learning parameters after update".into(),
            ));
        }
        mean.loss /= count;
        mean.entropy /= count;
        mean.mean_ratio /= count;
        mean.clip_fraction /= count;
        Ok(mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{AppClass, IntentRanges, SliceSpec};
    use rand::SeedableRng;

    #[test]
    fn singleton_feasible_set_is_always_chosen() {
        let catalog = SliceCatalog::log_spaced(10).unwrap();
        let worst = IntentRanges::default().worst_case();
        assert_eq!(catalog.feasible_indices(&worst).unwrap(), vec![9]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let a = perfect_knowledge_allocate(&[worst; 3], &catalog, &mut rng).unwrap();
            assert_eq!(a.slice_for_md, vec![9; 3]);
        }
    }

    #[test]
    fn perfect_knowledge_is_uniform_over_feasible_set() {
        // slices 8, 9, 10 feasible for this intent
        let catalog = SliceCatalog::log_spaced(10).unwrap();
        let intent = IntentInstance {
            app_class: AppClass::Embb,
            task_size_bits: 300.0,
            cycles_per_bit: 2e4,
            uplink_deadline_s: 0.02,
            compute_deadline_s: 0.02,
            storage_bits: 300.0,
            reliability: 1e-3,
        };
        assert_eq!(catalog.feasible_indices(&intent).unwrap(), vec![7, 8, 9]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 10];
        for _ in 0..10_000 {
            counts[perfect_knowledge_allocate(&[intent], &catalog, &mut rng)
                .unwrap()
                .slice_for_md[0]] += 1;
        }
        for c in &counts[7..] {
            assert!((*c as f64 / 1e4 - 1.0 / 3.0).abs() < 0.02);
        }
    }

    #[test]
    fn uncovered_intent_is_a_hard_error() {
        let catalog = SliceCatalog::new(vec![SliceSpec {
            slice_id: 1,
            uplink_rate_bps: 10.0,
            cpu_rate_hz: 10.0,
        }])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let intent = IntentRanges::default().worst_case();
        assert!(perfect_knowledge_allocate(&[intent], &catalog, &mut rng).is_err());
    }

    #[test]
    fn random_with_one_slice() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(random_allocate(4, 1, &mut rng).slice_for_md, vec![0; 4]);
    }

    #[test]
    fn random_slice_frequencies_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0usize; 10];
        for _ in 0..100_000 {
            counts[random_allocate(1, 10, &mut rng).slice_for_md[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e5 - 0.1).abs() < 0.02);
        }
    }

    #[test]
    fn perfect_runner_always_succeeds() {
        let mut r = FixedPolicyRunner::new(
            BaselineKind::PerfectKnowledge,
            Scenario::standard(5, 10).unwrap(),
            3,
        )
        .unwrap();
        for _ in 0..20 {
            assert_eq!(r.run_episode().unwrap().normalized_success(), 1.0);
        }
    }

    #[test]
    fn self_learning_trainer_runs_updates() {
        let cfg = TrainConfig {
            hidden: vec![16],
            episodes_per_update: 2,
            minibatch: 16,
            ..TrainConfig::default()
        };
        let mut t = SelfLearningTrainer::new(Scenario::standard(2, 10).unwrap(), cfg, 0).unwrap();
        for _ in 0..4 {
            t.run_episode(true).unwrap();
        }
        assert_eq!(t.episodes_trained(), 4);
        assert!(t.last_stats().is_some());
        assert!(t.buffers.iter().all(Vec::is_empty));
    }
}

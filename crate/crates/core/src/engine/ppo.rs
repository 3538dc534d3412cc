//! Actor and critic wrappers that turn minibatches into gradient steps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamParams, AdamState};
use super::dist::Categorical;
use super::loss::{critic_loss, ppo_actor_loss};
use super::nn::{ForwardCache, Mlp, MlpGrads};
use crate::error::{Error, Result};

/// One decision of a (possibly multi-head) policy. Every head runs the same
/// network on its own observation; the joint log-prob is the sum over heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorSample {
    pub heads: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub old_log_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActorStats {
    pub loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub net: Mlp,
    pub adam: AdamState,
}

fn clip_norm(grads: &mut MlpGrads, max_norm: Option<f64>) {
    if let Some(max) = max_norm {
        let norm = grads.l2_norm();
        if norm > max {
            grads.scale(max / norm);
        }
    }
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        actions: usize,
        adam: AdamParams,
        rng: &mut R,
    ) -> Result<Self> {
        let sizes: Vec<usize> = std::iter::once(input)
            .chain(hidden.iter().copied())
            .chain([actions])
            .collect();
        let net = Mlp::new(&sizes, 0.01, rng)?;
        let adam = AdamState::new(&net, adam);
        Ok(Self { net, adam })
    }

    pub fn distribution(&self, obs: &[f64]) -> Result<Categorical> {
        Categorical::from_logits(&self.net.predict(obs)?)
    }

    /// Picks one action per head. Returns actions, joint log-prob and summed entropy.
    pub fn act<R: Rng + ?Sized>(
        &self,
        heads: &[Vec<f64>],
        rng: &mut R,
        greedy: bool,
    ) -> Result<(Vec<usize>, f64, f64)> {
        let mut actions = Vec::with_capacity(heads.len());
        let (mut logp, mut ent) = (0.0, 0.0);
        for obs in heads {
            let d = self.distribution(obs)?;
            let a = if greedy { d.mode() } else { d.sample(rng) };
            logp += d.log_prob(a);
            ent += d.entropy();
            actions.push(a);
        }
        Ok((actions, logp, ent))
    }

    /// Gradient of `-L_clip - entropy_coef * H` over a minibatch.
    pub fn gradients(
        &self,
        samples: &[&ActorSample],
        advantages: &[f64],
        clip_eps: f64,
        entropy_coef: f64,
    ) -> Result<(MlpGrads, ActorStats)> {
        if samples.len() != advantages.len() {
            return Err(Error::Contract(
                "one advantage per actor sample required".into(),
            ));
        }
        let mut caches: Vec<Vec<(ForwardCache, Categorical)>> = Vec::with_capacity(samples.len());
        let mut new_lp = Vec::with_capacity(samples.len());
        let mut old_lp = Vec::with_capacity(samples.len());
        let mut entropy = 0.0;
        for s in samples {
            if s.heads.len() != s.actions.len() {
                return Err(Error::Contract("heads and actions differ in length".into()));
            }
            let mut per_head = Vec::with_capacity(s.heads.len());
            let mut lp = 0.0;
            for (obs, &a) in s.heads.iter().zip(&s.actions) {
                let cache = self.net.forward(obs)?;
                let d = Categorical::from_logits(cache.output())?;
                lp += d.log_prob(a);
                entropy += d.entropy();
                per_head.push((cache, d));
            }
            caches.push(per_head);
            new_lp.push(lp);
            old_lp.push(s.old_log_prob);
        }
        let loss = ppo_actor_loss(&new_lp, &old_lp, advantages, clip_eps);
        let valid = (samples.len() - loss.skipped).max(1) as f64;
        let mean_entropy = entropy / samples.len().max(1) as f64;

        let mut grads = self.net.zero_grads();
        let mut dlogits = vec![0.0; self.net.output_dim()];
        for ((s, per_head), &g_lp) in samples.iter().zip(&caches).zip(&loss.grad_logp) {
            for ((cache, d), &a) in per_head.iter().zip(&s.actions) {
                let gl = d.grad_log_prob(a);
                let ge = d.grad_entropy();
                for ((o, l), e) in dlogits.iter_mut().zip(&gl).zip(&ge) {
                    *o = g_lp * l - entropy_coef * e / valid;
                }
                self.net.backward(cache, &dlogits, &mut grads)?;
            }
        }
        let stats = ActorStats {
            loss: loss.loss - entropy_coef * mean_entropy,
            entropy: mean_entropy,
            mean_ratio: loss.mean_ratio,
            clip_fraction: loss.clip_fraction,
            skipped: loss.skipped,
        };
        if !stats.loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFinite(format!(
                "actor loss {} or its gradient",
                stats.loss
            )));
        }
        Ok((grads, stats))
    }

    pub fn apply(&mut self, mut grads: MlpGrads, max_grad_norm: Option<f64>) {
        clip_norm(&mut grads, max_grad_norm);
        self.adam.step(&mut self.net, &grads);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub net: Mlp,
    pub adam: AdamState,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        adam: AdamParams,
        rng: &mut R,
    ) -> Result<Self> {
        let sizes: Vec<usize> = std::iter::once(input)
            .chain(hidden.iter().copied())
            .chain([1])
            .collect();
        let net = Mlp::new(&sizes, 1.0, rng)?;
        let adam = AdamState::new(&net, adam);
        Ok(Self { net, adam })
    }

    pub fn value(&self, input: &[f64]) -> Result<f64> {
        Ok(self.net.predict(input)?[0])
    }

    /// Gradient of `value_coef * MSE(V(x), returns)`; also returns the unscaled MSE.
    pub fn gradients(
        &self,
        inputs: &[&[f64]],
        returns: &[f64],
        value_coef: f64,
    ) -> Result<(MlpGrads, f64)> {
        if inputs.len() != returns.len() {
            return Err(Error::Contract(
                "one return per critic input required".into(),
            ));
        }
        let caches = inputs
            .iter()
            .map(|x| self.net.forward(x))
            .collect::<Result<Vec<_>>>()?;
        let preds: Vec<f64> = caches.iter().map(|c| c.output()[0]).collect();
        let (loss, grad) = critic_loss(&preds, returns);
        let mut grads = self.net.zero_grads();
        for (c, g) in caches.iter().zip(&grad) {
            self.net.backward(c, &[value_coef * g], &mut grads)?;
        }
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFinite(format!(
                "critic loss {loss} or its gradient"
            )));
        }
        Ok((grads, loss))
    }

    pub fn apply(&mut self, mut grads: MlpGrads, max_grad_norm: Option<f64>) {
        clip_norm(&mut grads, max_grad_norm);
        self.adam.step(&mut self.net, &grads);
    }
}

/// Splits `0..n` into shuffled minibatches of at most `size` indices.
pub fn minibatches<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx.chunks(size.max(1)).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn minibatches_partition_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mb = minibatches(120, 64, &mut rng);
        assert_eq!(mb.len(), 2);
        assert_eq!(mb[0].len(), 64);
        let mut all: Vec<usize> = mb.concat();
        all.sort_unstable();
        assert_eq!(all, (0..120).collect::<Vec<_>>());
    }

    #[test]
    fn zero_advantage_without_entropy_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let actor = Actor::new(4, &[8], 3, AdamParams::default(), &mut rng).unwrap();
        let s = ActorSample {
            heads: vec![vec![0.1, 0.2, 0.3, 0.4]],
            actions: vec![1],
            old_log_prob: -1.0,
        };
        let (g, _) = actor.gradients(&[&s], &[0.0], 0.2, 0.0).unwrap();
        assert!(g.flat().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let actor = Actor::new(3, &[5], 4, AdamParams::default(), &mut rng).unwrap();
        let mut actor = actor;
        // larger output weights so the clip region is exercised away from ratio 1
        for w in actor.net.layers[1].weights.iter_mut() {
            *w *= 100.0;
        }
        let samples = [
            ActorSample {
                heads: vec![vec![0.2, -0.1, 0.5], vec![0.0, 0.3, -0.7]],
                actions: vec![1, 3],
                old_log_prob: -2.9,
            },
            ActorSample {
                heads: vec![vec![0.9, 0.1, -0.2], vec![0.4, 0.4, 0.4]],
                actions: vec![0, 2],
                old_log_prob: -2.7,
            },
        ];
        let refs: Vec<&ActorSample> = samples.iter().collect();
        let adv = [0.8, -1.3];
        let (eps, c2) = (0.2, 0.2);
        let loss_at = |a: &Actor| a.gradients(&refs, &adv, eps, c2).unwrap().1.loss;
        let (g, _) = actor.gradients(&refs, &adv, eps, c2).unwrap();
        let flat = g.flat();
        let h = 1e-6;
        for (i, &analytic) in flat.iter().enumerate() {
            let mut p = actor.clone();
            *p.net.param_mut(i).unwrap() += h;
            let mut m = actor.clone();
            *m.net.param_mut(i).unwrap() -= h;
            let fd = (loss_at(&p) - loss_at(&m)) / (2.0 * h);
            assert!(
                (fd - analytic).abs() <= 1e-6 * (1.0 + fd.abs()),
                "param {i}: fd {fd} vs {analytic}"
            );
        }
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let critic = Critic::new(3, &[6, 6], AdamParams::default(), &mut rng).unwrap();
        let xs = [
            vec![0.1, 0.5, -0.2],
            vec![0.7, -0.3, 0.0],
            vec![-0.5, 0.2, 0.9],
        ];
        let inputs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let rets = [1.0, -0.5, 2.0];
        let c1 = 0.2;
        let loss_at = |c: &Critic| c1 * c.gradients(&inputs, &rets, c1).unwrap().1;
        let (g, _) = critic.gradients(&inputs, &rets, c1).unwrap();
        let flat = g.flat();
        let h = 1e-5;
        for (i, &analytic) in flat.iter().enumerate() {
            let mut p = critic.clone();
            *p.net.param_mut(i).unwrap() += h;
            let mut m = critic.clone();
            *m.net.param_mut(i).unwrap() -= h;
            let fd = (loss_at(&p) - loss_at(&m)) / (2.0 * h);
            let denom = fd.abs().max(analytic.abs()).max(1e-8);
            assert!((fd - analytic).abs() / denom <= 1e-4 || (fd - analytic).abs() < 1e-10);
        }
    }
}

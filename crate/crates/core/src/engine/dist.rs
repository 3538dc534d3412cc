//! Categorical distribution over logits.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    log_probs: Vec<f64>,
    probs: Vec<f64>,
}

impl Categorical {
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::Contract("categorical over zero outcomes".into()));
        }
        if let Some((i, v)) = logits.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("logit {i} is {v} in {logits:?}")));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = logits.iter().map(|l| l - lse).collect();
        let probs = log_probs.iter().map(|lp| lp.exp()).collect();
        Ok(Self { log_probs, probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_prob(&self, action: usize) -> f64 {
        self.log_probs[action]
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .zip(&self.log_probs)
            .map(|(p, lp)| p * lp)
            .sum::<f64>()
    }

    /// Inverse-CDF sampling from one uniform draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // u landed in the rounding slack above the last cumulative sum
        self.probs
            .iter()
            .rposition(|&p| p > 0.0)
            .unwrap_or(self.probs.len() - 1)
    }

    /// Most likely outcome; lowest index on ties.
    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// `d log p(action) / d logits = onehot(action) - p`.
    pub fn grad_log_prob(&self, action: usize) -> Vec<f64> {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| if i == action { 1.0 - p } else { -p })
            .collect()
    }

    /// `d H / d logit_i = -p_i (log p_i + H)`.
    pub fn grad_entropy(&self) -> Vec<f64> {
        let h = self.entropy();
        self.probs
            .iter()
            .zip(&self.log_probs)
            .map(|(p, lp)| -p * (lp + h))
            .collect()
    }
}

/// Samples an action and returns `(action, log_prob, entropy)`.
pub fn categorical_sample_and_logprob<R: Rng + ?Sized>(
    logits: &[f64],
    rng: &mut R,
) -> Result<(usize, f64, f64)> {
    let dist = Categorical::from_logits(logits)?;
    let a = dist.sample(rng);
    Ok((a, dist.log_prob(a), dist.entropy()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_logits_are_uniform() {
        let d = Categorical::from_logits(&[0.7; 10]).unwrap();
        assert!((d.entropy() - 10f64.ln()).abs() < 1e-12);
        for a in 0..10 {
            assert!((d.log_prob(a) + 10f64.ln()).abs() < 1e-12);
        }
        let z = Categorical::from_logits(&[0.0; 4]).unwrap();
        assert!(z.probs().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn nan_logits_fail_hard() {
        assert!(matches!(
            Categorical::from_logits(&[0.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(Categorical::from_logits(&[]).is_err());
    }

    #[test]
    fn dominant_logit_is_almost_always_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut logits = vec![0.0; 10];
        logits[6] = 20.0;
        let hits = (0..10_000)
            .filter(|_| categorical_sample_and_logprob(&logits, &mut rng).unwrap().0 == 6)
            .count();
        assert!(hits as f64 / 1e4 > 0.999);
    }

    #[test]
    fn sampling_frequency_matches_softmax() {
        // softmax(0, ln 3) = (0.25, 0.75)
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = [0.0, 3f64.ln()];
        let d = Categorical::from_logits(&logits).unwrap();
        let n = 100_000;
        let ones = (0..n).filter(|_| d.sample(&mut rng) == 1).count();
        assert!((ones as f64 / n as f64 - 0.75).abs() < 0.01);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let logits = [0.3, -1.2, 2.0, 0.5];
        let h = 1e-6;
        let d = Categorical::from_logits(&logits).unwrap();
        let gl = d.grad_log_prob(2);
        let ge = d.grad_entropy();
        for i in 0..logits.len() {
            let mut p = logits;
            let mut m = logits;
            p[i] += h;
            m[i] -= h;
            let dp = Categorical::from_logits(&p).unwrap();
            let dm = Categorical::from_logits(&m).unwrap();
            let fd_lp = (dp.log_prob(2) - dm.log_prob(2)) / (2.0 * h);
            let fd_h = (dp.entropy() - dm.entropy()) / (2.0 * h);
            assert!((fd_lp - gl[i]).abs() < 1e-8);
            assert!((fd_h - ge[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn mode_picks_largest() {
        assert_eq!(
            Categorical::from_logits(&[0.0, 2.0, 2.0, 1.0])
                .unwrap()
                .mode(),
            1
        );
    }
}

//! PPO clipped surrogate and value regression losses.

/// Per-sample clipped objective `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn clipped_objective(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * advantage).min(clipped * advantage)
}

/// Derivative of [`clipped_objective`] with respect to the new log-prob:
/// `r A` on the unclipped branch, 0 when the clipped branch is strictly smaller.
pub fn clipped_objective_grad_logp(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    if ratio * advantage <= clipped * advantage {
        ratio * advantage
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActorLoss {
    /// `-mean(clipped objective)` over the valid samples.
    pub loss: f64,
    /// `d loss / d new_logprob[i]`; zero for skipped samples.
    pub grad_logp: Vec<f64>,
    pub mean_ratio: f64,
    /// Fraction of valid samples with `|r - 1| > eps`.
    pub clip_fraction: f64,
    /// Samples dropped because the ratio was not finite.
    pub skipped: usize,
}

pub fn ppo_actor_loss(
    new_logprobs: &[f64],
    old_logprobs: &[f64],
    advantages: &[f64],
    eps: f64,
) -> ActorLoss {
    assert_eq!(new_logprobs.len(), old_logprobs.len());
    assert_eq!(new_logprobs.len(), advantages.len());
    let ratios: Vec<f64> = new_logprobs
        .iter()
        .zip(old_logprobs)
        .map(|(n, o)| (n - o).exp())
        .collect();
    let valid = ratios.iter().filter(|r| r.is_finite()).count();
    let skipped = ratios.len() - valid;
    if skipped > 0 {
        log::warn!("skipping {skipped} samples with non-finite policy ratio");
    }
    if valid == 0 {
        return ActorLoss {
            grad_logp: vec![0.0; ratios.len()],
            skipped,
            ..Default::default()
        };
    }
    let inv = 1.0 / valid as f64;
    let mut out = ActorLoss {
        grad_logp: vec![0.0; ratios.len()],
        skipped,
        ..Default::default()
    };
    let mut clipped = 0usize;
    for (i, (&r, &a)) in ratios.iter().zip(advantages).enumerate() {
        if !r.is_finite() {
            continue;
        }
        out.loss -= clipped_objective(r, a, eps) * inv;
        out.grad_logp[i] = -clipped_objective_grad_logp(r, a, eps) * inv;
        out.mean_ratio += r * inv;
        if (r - 1.0).abs() > eps {
            clipped += 1;
        }
    }
    out.clip_fraction = clipped as f64 * inv;
    out
}

/// Mean squared error and its gradient with respect to each prediction.
pub fn critic_loss(predictions: &[f64], returns: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(predictions.len(), returns.len());
    if predictions.is_empty() {
        return (0.0, Vec::new());
    }
    let n = predictions.len() as f64;
    let loss = predictions
        .iter()
        .zip(returns)
        .map(|(p, r)| (p - r).powi(2))
        .sum::<f64>()
        / n;
    let grad = predictions
        .iter()
        .zip(returns)
        .map(|(p, r)| 2.0 * (p - r) / n)
        .collect();
    (loss, grad)
}

//! Independent oracles shared by the integration suites.

// Oracles index the way the sums are written.
#![allow(clippy::needless_range_loop)]
#![allow(dead_code)]

use intent_emcom::engine::{Categorical, Mlp};
use intent_emcom::env::{AppClass, IntentInstance, IntentRanges, SliceCatalog, SliceSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deadline check written out from the timing model, independent of the crate.
pub fn oracle_feasible(i: &IntentInstance, s: &SliceSpec) -> bool {
    i.task_size_bits / s.uplink_rate_bps <= i.uplink_deadline_s
        && i.task_size_bits * i.cycles_per_bit / s.cpu_rate_hz <= i.compute_deadline_s
}

/// Uniform draw of the scored intent fields using the oracle's own sampler.
pub fn oracle_intent(rng: &mut ChaCha8Rng, r: &IntentRanges) -> IntentInstance {
    let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.gen::<f64>();
    IntentInstance {
        app_class: AppClass::Urllc,
        task_size_bits: u(r.task_size_bits.min, r.task_size_bits.max),
        cycles_per_bit: u(r.cycles_per_bit.min, r.cycles_per_bit.max),
        uplink_deadline_s: u(r.uplink_deadline_s.min, r.uplink_deadline_s.max),
        compute_deadline_s: u(r.compute_deadline_s.min, r.compute_deadline_s.max),
        storage_bits: 0.0,
        reliability: 0.0,
    }
}

/// Monte-Carlo estimate of E[|feasible set|] / M.
pub fn oracle_random_rate(catalog: &SliceCatalog, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = IntentRanges::default();
    let mut feasible = 0usize;
    for _ in 0..samples {
        let i = oracle_intent(&mut rng, &r);
        feasible += catalog
            .slices()
            .iter()
            .filter(|s| oracle_feasible(&i, s))
            .count();
    }
    feasible as f64 / (samples * catalog.len()) as f64
}

/// Advantages as the explicit double sum `sum_l (gamma lambda)^l delta_{t+l}`,
/// truncated after the first terminal step.
pub fn gae_brute_force(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let delta = |k: usize| {
        let next = if dones[k] {
            0.0
        } else if k + 1 < n {
            values[k + 1]
        } else {
            last_value
        };
        rewards[k] + gamma * next - values[k]
    };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for k in t..n {
                total += (gamma * lambda).powi((k - t) as i32) * delta(k);
                if dones[k] {
                    break;
                }
            }
            total
        })
        .collect()
}

/// Scalar objective whose gradient exercises backward: `g . f(x)` plus a
/// log-softmax term through the categorical head.
fn objective(net: &Mlp, x: &[f64], g: &[f64], action: usize) -> f64 {
    let out = net.predict(x).unwrap();
    let lin: f64 = out.iter().zip(g).map(|(a, b)| a * b).sum();
    lin + Categorical::from_logits(&out).unwrap().log_prob(action)
}

/// Relative error with a floor so coordinates with a vanishing gradient are
/// judged on absolute error.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Worst relative error over every parameter of `trials` random networks.
pub fn max_gradient_error(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let depth = rng.gen_range(1..=3);
        let mut sizes = vec![rng.gen_range(1..=8)];
        for _ in 0..depth {
            sizes.push(rng.gen_range(1..=8));
        }
        sizes.push(rng.gen_range(2..=5));
        let mut net = Mlp::new(&sizes, 1.0, &mut rng).unwrap();
        // some exact zeros exercise the sparse first layer
        let x: Vec<f64> = (0..sizes[0])
            .map(|_| {
                if rng.gen_bool(0.3) {
                    0.0
                } else {
                    rng.gen_range(-1.5..1.5)
                }
            })
            .collect();
        let g: Vec<f64> = (0..net.output_dim())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let action = rng.gen_range(0..net.output_dim());

        let cache = net.forward(&x).unwrap();
        let dist = Categorical::from_logits(cache.output()).unwrap();
        let grad_out: Vec<f64> = g
            .iter()
            .zip(dist.grad_log_prob(action))
            .map(|(a, b)| a + b)
            .collect();
        let mut grads = net.zero_grads();
        net.backward(&cache, &grad_out, &mut grads).unwrap();
        let analytic = grads.flat();

        let h = 1e-5;
        for (k, &a) in analytic.iter().enumerate() {
            let p = *net.param_mut(k).unwrap();
            *net.param_mut(k).unwrap() = p + h;
            let up = objective(&net, &x, &g, action);
            *net.param_mut(k).unwrap() = p - h;
            let down = objective(&net, &x, &g, action);
            *net.param_mut(k).unwrap() = p;
            worst = worst.max(rel_err(a, (up - down) / (2.0 * h)));
        }
    }
    worst
}

//! Browser bindings: per-slice feasibility for one intent, the random-pick
//! success rate of a catalog, and an incremental training session whose
//! curve the page draws while it runs.
//!
//! Every export is a thin shim over a plain Rust function returning
//! `Result<String, String>` so the logic is testable on the host.

use intent_emcom::engine::TrainConfig;
use intent_emcom::env::{
    compute_time, is_satisfied, sample_intent, uplink_time, AppClass, IntentInstance, IntentRanges,
};
use intent_emcom::harness::{Runner, Scheme};
use intent_emcom::seeding::{stream_rng, Stream};
use intent_emcom::Scenario;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_MDS: usize = 12;
const MAX_SLICES: usize = 40;
const MAX_SAMPLES: usize = 1_000_000;

#[derive(Debug, Serialize)]
struct SliceRow {
    slice_id: usize,
    uplink_rate_bps: f64,
    cpu_rate_hz: f64,
    uplink_time_s: f64,
    compute_time_s: f64,
    feasible: bool,
}

fn check_slices(num_slices: usize) -> Result<(), String> {
    if num_slices == 0 || num_slices > MAX_SLICES {
        return Err(format!(
            "number of slices must be in 1..={MAX_SLICES}, got {num_slices}"
        ));
    }
    Ok(())
}

/// Uplink and compute times of one intent on every slice of a log-spaced catalog.
pub fn feasibility_json(
    num_slices: usize,
    task_size_bits: f64,
    cycles_per_bit: f64,
    uplink_deadline_ms: f64,
    compute_deadline_ms: f64,
) -> Result<String, String> {
    check_slices(num_slices)?;
    for (name, v) in [
        ("task size", task_size_bits),
        ("cycles per bit", cycles_per_bit),
        ("uplink deadline", uplink_deadline_ms),
        ("compute deadline", compute_deadline_ms),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(format!("{name} must be a positive number, got {v}"));
        }
    }
    let scenario = Scenario::standard(1, num_slices).map_err(|e| e.to_string())?;
    let intent = IntentInstance {
        app_class: AppClass::Urllc,
        task_size_bits,
        cycles_per_bit,
        uplink_deadline_s: uplink_deadline_ms * 1e-3,
        compute_deadline_s: compute_deadline_ms * 1e-3,
        storage_bits: 0.0,
        reliability: 0.0,
    };
    let rows = scenario
        .catalog
        .slices()
        .iter()
        .map(|s| {
            Ok(SliceRow {
                slice_id: s.slice_id,
                uplink_rate_bps: s.uplink_rate_bps,
                cpu_rate_hz: s.cpu_rate_hz,
                uplink_time_s: uplink_time(&intent, s)?,
                compute_time_s: compute_time(&intent, s)?,
                feasible: is_satisfied(&intent, s)?,
            })
        })
        .collect::<intent_emcom::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
struct RateEstimate {
    samples: usize,
    /// Probability that a uniformly drawn slice meets a sampled intent.
    random_rate: f64,
    /// Share of intents met by each slice.
    per_slice: Vec<f64>,
}

/// Monte-Carlo success rate of picking a slice uniformly at random, averaged
/// over intents drawn from the default ranges.
pub fn random_rate_json(num_slices: usize, samples: usize, seed: u64) -> Result<String, String> {
    check_slices(num_slices)?;
    if samples == 0 || samples > MAX_SAMPLES {
        return Err(format!(
            "samples must be in 1..={MAX_SAMPLES}, got {samples}"
        ));
    }
    let scenario = Scenario::standard(1, num_slices).map_err(|e| e.to_string())?;
    let ranges = IntentRanges::default();
    let mut rng = stream_rng(seed, Stream::Baseline);
    let mut hits = vec![0usize; num_slices];
    for _ in 0..samples {
        let intent = sample_intent(&mut rng, &ranges);
        let mask = scenario
            .catalog
            .feasibility_mask(&intent)
            .map_err(|e| e.to_string())?;
        for (h, ok) in hits.iter_mut().zip(mask) {
            *h += ok as usize;
        }
    }
    let per_slice: Vec<f64> = hits.iter().map(|&h| h as f64 / samples as f64).collect();
    let random_rate = per_slice.iter().sum::<f64>() / num_slices as f64;
    serde_json::to_string(&RateEstimate {
        samples,
        random_rate,
        per_slice,
    })
    .map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
struct ChunkReport {
    scheme: String,
    episodes_trained: usize,
    /// Normalized success of each episode in this chunk.
    success: Vec<f64>,
}

/// Owns one runner and advances it a chunk of episodes at a time so the page
/// stays responsive.
pub struct Session {
    scheme: Scheme,
    runner: Runner,
}

impl Session {
    pub fn create(
        scheme: &str,
        num_mds: usize,
        num_slices: usize,
        seed: u64,
    ) -> Result<Self, String> {
        let scheme: Scheme = scheme
            .parse()
            .map_err(|e: intent_emcom::Error| e.to_string())?;
        if num_mds == 0 || num_mds > MAX_MDS {
            return Err(format!(
                "number of MDs must be in 1..={MAX_MDS}, got {num_mds}"
            ));
        }
        check_slices(num_slices)?;
        let scenario = Scenario::standard(num_mds, num_slices).map_err(|e| e.to_string())?;
        let runner = Runner::new(scheme, scenario, &TrainConfig::default(), seed)
            .map_err(|e| e.to_string())?;
        Ok(Self { scheme, runner })
    }

    /// Runs `episodes` episodes, learning when `learn` is set and the scheme
    /// learns at all.
    pub fn advance(&mut self, episodes: usize, learn: bool) -> Result<String, String> {
        let mut success = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let stats = self.runner.run_episode(learn).map_err(|e| e.to_string())?;
            success.push(stats.normalized_success());
        }
        let report = ChunkReport {
            scheme: self.scheme.to_string(),
            episodes_trained: self.runner.episodes_trained(),
            success,
        };
        serde_json::to_string(&report).map_err(|e| e.to_string())
    }
}

#[wasm_bindgen]
pub fn feasibility(
    num_slices: usize,
    task_size_bits: f64,
    cycles_per_bit: f64,
    uplink_deadline_ms: f64,
    compute_deadline_ms: f64,
) -> Result<String, JsError> {
    feasibility_json(
        num_slices,
        task_size_bits,
        cycles_per_bit,
        uplink_deadline_ms,
        compute_deadline_ms,
    )
    .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = randomRate)]
pub fn random_rate(num_slices: usize, samples: usize, seed: u64) -> Result<String, JsError> {
    random_rate_json(num_slices, samples, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub struct TrainingSession(Session);

#[wasm_bindgen]
impl TrainingSession {
    #[wasm_bindgen(constructor)]
    pub fn new(
        scheme: &str,
        num_mds: usize,
        num_slices: usize,
        seed: u64,
    ) -> Result<TrainingSession, JsError> {
        Session::create(scheme, num_mds, num_slices, seed)
            .map(TrainingSession)
            .map_err(|e| JsError::new(&e))
    }

    pub fn train(&mut self, episodes: usize) -> Result<String, JsError> {
        self.0.advance(episodes, true).map_err(|e| JsError::new(&e))
    }

    /// Greedy episodes without updates.
    pub fn test(&mut self, episodes: usize) -> Result<String, JsError> {
        self.0
            .advance(episodes, false)
            .map_err(|e| JsError::new(&e))
    }
}

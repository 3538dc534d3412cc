//! Per-episode metric rows and their CSV form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::config::Scheme;
use crate::env::EpisodeStats;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Test,
}

/// One episode of one (scheme, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scheme: Scheme,
    pub seed: u64,
    pub phase: Phase,
    /// Zero-based index within the phase.
    pub episode: usize,
    pub normalized_success: f64,
    pub normalized_failure: f64,
    pub mean_team_reward: f64,
    pub successes: usize,
    pub decisions: usize,
}

impl MetricRow {
    pub fn new(
        scheme: Scheme,
        seed: u64,
        phase: Phase,
        episode: usize,
        stats: &EpisodeStats,
    ) -> Self {
        Self {
            scheme,
            seed,
            phase,
            episode,
            normalized_success: stats.normalized_success(),
            normalized_failure: stats.normalized_failure(),
            mean_team_reward: stats.mean_team_reward(),
            successes: stats.successes,
            decisions: stats.decisions,
        }
    }
}

/// Column order of `metrics.csv`; matches the field order of [`MetricRow`].
pub const CSV_HEADER: [&str; 9] = [
    "scheme",
    "seed",
    "phase",
    "episode",
    "normalized_success",
    "normalized_failure",
    "mean_team_reward",
    "successes",
    "decisions",
];

/// Writes the header line and one line per row, LF terminated, floats in
/// shortest round-trip form. An empty slice yields the header alone.
pub fn write_rows<W: Write>(out: W, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r
        .deserialize()
        .collect::<Result<Vec<MetricRow>, csv::Error>>()?;
    Ok(rows)
}

/// Trailing moving average; early points average over what is available.
pub fn moving_average(values: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Contract("moving average window must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    Ok(out)
}

/// Sample mean and standard deviation (n - 1 denominator, 0 for one sample).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

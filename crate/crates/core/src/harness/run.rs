//! Experiment orchestration: cells, summaries, sweeps and output files.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, Runner};
use super::config::{ExperimentConfig, Scheme};
use super::metrics::{mean_std, moving_average, write_rows, MetricRow, Phase};
use super::plot::{Chart, Series, Style};
use crate::error::{Error, Result};

/// Window of the moving average applied to training curves.
pub const SMOOTHING_WINDOW: usize = 50;

fn scheme_color(scheme: Scheme) -> Option<String> {
    let c = match scheme {
        Scheme::Proposed => "#1f77b4",
        Scheme::Perfect => "#2ca02c",
        Scheme::Random => "#ff7f0e",
        Scheme::SelfLearning => "#d62728",
    };
    Some(c.to_string())
}

/// Everything one (scheme, seed) pair produced.
#[derive(Debug, Clone)]
pub struct CellOutput {
    pub scheme: Scheme,
    pub seed: u64,
    pub rows: Vec<MetricRow>,
    /// Runner state right after training, before the test phase.
    pub checkpoint: Checkpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub scheme: Scheme,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self {
            mean,
            std,
            n: values.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub train_tail_success: Option<f64>,
    pub test_success: f64,
    pub test_failure: f64,
    pub test_successes_per_episode: f64,
    pub test_failures_per_episode: f64,
    pub test_team_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: Scheme,
    pub train_tail_success: Option<MeanStd>,
    pub test_success: MeanStd,
    pub test_failure: MeanStd,
    pub test_successes_per_episode: MeanStd,
    pub test_failures_per_episode: MeanStd,
    pub test_team_reward: MeanStd,
    pub per_seed: Vec<SeedSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub num_mds: usize,
    pub num_slices: usize,
    pub train_episodes: usize,
    pub test_episodes: usize,
    pub train_tail: usize,
    pub smoothing_window: usize,
    pub schemes: Vec<SchemeSummary>,
    pub failures: Vec<CellFailure>,
}

impl RunSummary {
    pub fn scheme(&self, scheme: Scheme) -> Option<&SchemeSummary> {
        self.schemes.iter().find(|s| s.scheme == scheme)
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub summary: RunSummary,
    pub rows: Vec<MetricRow>,
    pub cells: Vec<CellOutput>,
}

/// Trains (when the scheme learns) and then runs the greedy test phase.
pub fn run_cell(cfg: &ExperimentConfig, scheme: Scheme, seed: u64) -> Result<CellOutput> {
    let mut runner = Runner::new(scheme, cfg.scenario()?, &cfg.train, seed)?;
    let train_episodes = if scheme.learns() {
        cfg.train.episodes
    } else {
        0
    };
    let mut rows = Vec::with_capacity(train_episodes + cfg.run.test_episodes);
    for ep in 0..train_episodes {
        let stats = runner.run_episode(true)?;
        rows.push(MetricRow::new(scheme, seed, Phase::Train, ep, &stats));
        if (ep + 1) % 1000 == 0 {
            log::info!("{scheme} seed {seed}: {} training episodes", ep + 1);
        }
    }
    let checkpoint = Checkpoint::new(scheme, seed, runner.clone());
    for ep in 0..cfg.run.test_episodes {
        let stats = runner.run_episode(false)?;
        rows.push(MetricRow::new(scheme, seed, Phase::Test, ep, &stats));
    }
    Ok(CellOutput {
        scheme,
        seed,
        rows,
        checkpoint,
    })
}

/// Runs every cell. A failing cell is recorded and the rest continue.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let cells: Vec<(Scheme, u64)> = cfg
        .run
        .schemes
        .iter()
        .flat_map(|&s| cfg.run.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let results: Vec<Mutex<Option<Result<CellOutput>>>> =
        cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(scheme, seed)) = cells.get(i) else {
            break;
        };
        log::info!("running {scheme} seed {seed}");
        let out = run_cell(cfg, scheme, seed);
        if let Ok(mut slot) = results[i].lock() {
            *slot = Some(out);
        }
    };
    let jobs = cfg.run.jobs.min(cells.len()).max(1);
    if jobs == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(worker);
            }
        });
    }

    let mut outputs = Vec::new();
    let mut failures = Vec::new();
    for ((scheme, seed), slot) in cells.into_iter().zip(results) {
        let res = slot
            .into_inner()
            .ok()
            .flatten()
            .unwrap_or_else(|| Err(Error::Contract("worker thread panicked".into())));
        match res {
            Ok(out) => outputs.push(out),
            Err(e) => {
                log::error!("{scheme} seed {seed} failed: {e}");
                failures.push(CellFailure {
                    scheme,
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    let rows: Vec<MetricRow> = outputs
        .iter()
        .flat_map(|c| c.rows.iter().cloned())
        .collect();
    let summary = summarize(cfg, &outputs, failures);
    Ok(RunReport {
        summary,
        rows,
        cells: outputs,
    })
}

fn summarize(
    cfg: &ExperimentConfig,
    outputs: &[CellOutput],
    failures: Vec<CellFailure>,
) -> RunSummary {
    let mut schemes = Vec::new();
    for &scheme in &cfg.run.schemes {
        let per_seed: Vec<SeedSummary> = outputs
            .iter()
            .filter(|c| c.scheme == scheme)
            .map(|c| seed_summary(c, cfg.run.train_tail))
            .collect();
        if per_seed.is_empty() {
            continue;
        }
        let col =
            |f: fn(&SeedSummary) -> f64| MeanStd::of(&per_seed.iter().map(f).collect::<Vec<_>>());
        let tails: Option<Vec<f64>> = per_seed.iter().map(|s| s.train_tail_success).collect();
        schemes.push(SchemeSummary {
            scheme,
            train_tail_success: tails.map(|t| MeanStd::of(&t)),
            test_success: col(|s| s.test_success),
            test_failure: col(|s| s.test_failure),
            test_successes_per_episode: col(|s| s.test_successes_per_episode),
            test_failures_per_episode: col(|s| s.test_failures_per_episode),
            test_team_reward: col(|s| s.test_team_reward),
            per_seed,
        });
    }
    RunSummary {
        num_mds: cfg.env.num_mds,
        num_slices: cfg.scenario().map(|s| s.num_slices()).unwrap_or(0),
        train_episodes: cfg.train.episodes,
        test_episodes: cfg.run.test_episodes,
        train_tail: cfg.run.train_tail,
        smoothing_window: SMOOTHING_WINDOW,
        schemes,
        failures,
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn seed_summary(cell: &CellOutput, tail: usize) -> SeedSummary {
    let train: Vec<&MetricRow> = cell
        .rows
        .iter()
        .filter(|r| r.phase == Phase::Train)
        .collect();
    let test: Vec<&MetricRow> = cell
        .rows
        .iter()
        .filter(|r| r.phase == Phase::Test)
        .collect();
    let train_tail_success = (!train.is_empty() && tail > 0).then(|| {
        mean(
            train[train.len().saturating_sub(tail)..]
                .iter()
                .map(|r| r.normalized_success),
        )
    });
    SeedSummary {
        seed: cell.seed,
        train_tail_success,
        test_success: mean(test.iter().map(|r| r.normalized_success)),
        test_failure: mean(test.iter().map(|r| r.normalized_failure)),
        test_successes_per_episode: mean(test.iter().map(|r| r.successes as f64)),
        test_failures_per_episode: mean(test.iter().map(|r| (r.decisions - r.successes) as f64)),
        test_team_reward: mean(test.iter().map(|r| r.mean_team_reward)),
    }
}

/// Seed-averaged, smoothed training curve of one metric.
fn training_curve(
    rows: &[MetricRow],
    scheme: Scheme,
    metric: fn(&MetricRow) -> f64,
) -> Result<Vec<(f64, f64)>> {
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for r in rows
        .iter()
        .filter(|r| r.scheme == scheme && r.phase == Phase::Train)
    {
        if sums.len() <= r.episode {
            sums.resize(r.episode + 1, (0.0, 0));
        }
        sums[r.episode].0 += metric(r);
        sums[r.episode].1 += 1;
    }
    let avg: Vec<f64> = sums.iter().map(|&(s, n)| s / n.max(1) as f64).collect();
    let smooth = moving_average(&avg, SMOOTHING_WINDOW)?;
    Ok(smooth
        .into_iter()
        .enumerate()
        .map(|(i, v)| ((i + 1) as f64, v))
        .collect())
}

fn episode_chart(report: &RunReport, failure: bool) -> Result<Chart> {
    let (what, metric): (&str, fn(&MetricRow) -> f64) = if failure {
        ("failure", |r| r.normalized_failure)
    } else {
        ("success", |r| r.normalized_success)
    };
    let horizon = report.summary.train_episodes.max(1) as f64;
    let mut series = Vec::new();
    for s in &report.summary.schemes {
        if s.scheme.learns() {
            series.push(Series {
                label: format!("{} (train)", s.scheme),
                points: training_curve(&report.rows, s.scheme, metric)?,
                style: Style::Solid,
                color: scheme_color(s.scheme),
            });
        }
    }
    for s in &report.summary.schemes {
        let level = if failure {
            s.test_failure.mean
        } else {
            s.test_success.mean
        };
        series.push(Series {
            label: format!("{} (test)", s.scheme),
            points: vec![(1.0, level), (horizon, level)],
            style: Style::Dashed,
            color: scheme_color(s.scheme),
        });
    }
    Ok(Chart {
        title: format!(
            "Normalized {what} vs episode, N={} (moving average, window {SMOOTHING_WINDOW})",
            report.summary.num_mds
        ),
        x_label: "training episode".into(),
        y_label: format!("normalized {what}"),
        y_range: Some((0.0, 1.0)),
        series,
    })
}

/// Writes metrics.csv, summary.json, the two episode charts and checkpoints.
pub fn write_outputs(cfg: &ExperimentConfig, report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_rows(fs::File::create(dir.join("metrics.csv"))?, &report.rows)?;
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&report.summary)? + "\n",
    )?;
    fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
    fs::write(
        dir.join("success_vs_episode.svg"),
        episode_chart(report, false)?.render(),
    )?;
    fs::write(
        dir.join("failure_vs_episode.svg"),
        episode_chart(report, true)?.render(),
    )?;
    if cfg.run.write_checkpoints {
        let ck_dir = dir.join("checkpoints");
        fs::create_dir_all(&ck_dir)?;
        for cell in &report.cells {
            cell.checkpoint
                .save(&ck_dir.join(format!("{}-seed{}.json", cell.scheme, cell.seed)))?;
        }
    }
    Ok(())
}

/// Fails early, as a configuration error, when `dir` cannot be written.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    let probe = dir.join(".write-probe");
    fs::create_dir_all(dir)
        .and_then(|_| fs::write(&probe, b""))
        .and_then(|_| fs::remove_file(&probe))
        .map_err(|e| {
            Error::Config(format!(
                "output directory {} is not writable: {e}",
                dir.display()
            ))
        })
}

/// Runs the experiment and writes its outputs to `run.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    ensure_writable(&cfg.run.out_dir)?;
    let report = execute(cfg)?;
    write_outputs(cfg, &report, &cfg.run.out_dir)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub num_mds: usize,
    pub scheme: Scheme,
    pub seeds: usize,
    pub normalized_success: f64,
    pub normalized_success_std: f64,
    pub normalized_failure: f64,
    pub successes_per_episode: f64,
    pub failures_per_episode: f64,
    /// Perfect-knowledge minus this scheme, in successes per episode.
    pub gap_to_perfect_successes: Option<f64>,
    /// Perfect-knowledge minus this scheme, in normalized success.
    pub gap_to_perfect_normalized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub counts: Vec<usize>,
    pub rows: Vec<SweepRow>,
    pub failures: Vec<(usize, CellFailure)>,
}

impl SweepReport {
    pub fn get(&self, num_mds: usize, scheme: Scheme) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.num_mds == num_mds && r.scheme == scheme)
    }
}

/// Parses `2..8` (inclusive), `2..=8` or a comma separated list.
pub fn parse_counts(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("invalid user counts {text:?}; use 2..8 or 2,4,8"));
    let counts: Vec<usize> = if let Some((a, b)) = text.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b
            .trim()
            .trim_start_matches('=')
            .parse()
            .map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        text.split(',')
            .map(|t| t.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if counts.is_empty() || counts.contains(&0) {
        return Err(bad());
    }
    Ok(counts)
}

pub fn sweep_config(base: &ExperimentConfig, num_mds: usize) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.env.num_mds = num_mds;
    cfg.run.out_dir = base.run.out_dir.join(format!("n{num_mds}"));
    cfg
}

/// Runs the experiment once per user count. `write` controls output files.
pub fn sweep_users(base: &ExperimentConfig, counts: &[usize], write: bool) -> Result<SweepReport> {
    if counts.is_empty() {
        return Err(Error::Config("no user counts given".into()));
    }
    for &n in counts {
        sweep_config(base, n).validate()?;
    }
    if write {
        ensure_writable(&base.run.out_dir)?;
    }
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &n in counts {
        let cfg = sweep_config(base, n);
        log::info!("sweep: N = {n}");
        let report = execute(&cfg)?;
        if write {
            write_outputs(&cfg, &report, &cfg.run.out_dir)?;
        }
        failures.extend(report.summary.failures.iter().cloned().map(|f| (n, f)));
        let perfect = report.summary.scheme(Scheme::Perfect).cloned();
        for s in &report.summary.schemes {
            rows.push(SweepRow {
                num_mds: n,
                scheme: s.scheme,
                seeds: s.test_success.n,
                normalized_success: s.test_success.mean,
                normalized_success_std: s.test_success.std,
                normalized_failure: s.test_failure.mean,
                successes_per_episode: s.test_successes_per_episode.mean,
                failures_per_episode: s.test_failures_per_episode.mean,
                gap_to_perfect_successes: perfect
                    .as_ref()
                    .map(|p| p.test_successes_per_episode.mean - s.test_successes_per_episode.mean),
                gap_to_perfect_normalized: perfect
                    .as_ref()
                    .map(|p| p.test_success.mean - s.test_success.mean),
            });
        }
    }
    let report = SweepReport {
        counts: counts.to_vec(),
        rows,
        failures,
    };
    if write {
        write_sweep(base, &report, &base.run.out_dir)?;
    }
    Ok(report)
}

fn sweep_chart(base: &ExperimentConfig, report: &SweepReport, absolute: bool) -> Chart {
    let series = base
        .run
        .schemes
        .iter()
        .map(|&scheme| Series {
            label: scheme.to_string(),
            points: report
                .rows
                .iter()
                .filter(|r| r.scheme == scheme)
                .map(|r| {
                    let y = if absolute {
                        r.successes_per_episode
                    } else {
                        r.normalized_success
                    };
                    (r.num_mds as f64, y)
                })
                .collect(),
            style: Style::Markers,
            color: scheme_color(scheme),
        })
        .collect();
    let (title, y_label, y_range) = if absolute {
        (
            "Successful intents per test episode vs number of MDs",
            "successes per episode",
            None,
        )
    } else {
        (
            "Normalized test success vs number of MDs",
            "normalized success",
            Some((0.0, 1.0)),
        )
    };
    Chart {
        title: title.into(),
        x_label: "number of MDs (N)".into(),
        y_label: y_label.into(),
        y_range,
        series,
    }
}

pub fn write_sweep(base: &ExperimentConfig, report: &SweepReport, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(fs::File::create(dir.join("sweep.csv"))?);
    for row in &report.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    fs::write(
        dir.join("sweep.json"),
        serde_json::to_string_pretty(report)? + "\n",
    )?;
    fs::write(
        dir.join("success_vs_users.svg"),
        sweep_chart(base, report, false).render(),
    )?;
    fs::write(
        dir.join("successes_vs_users.svg"),
        sweep_chart(base, report, true).render(),
    )?;
    Ok(dir.to_path_buf())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scheme: Scheme,
    pub seed: u64,
    pub episodes_trained: usize,
    pub episodes: usize,
    pub normalized_success: f64,
    pub normalized_failure: f64,
    pub successes_per_episode: f64,
    pub mean_team_reward: f64,
}

/// Runs `episodes` greedy test episodes from a checkpoint.
pub fn evaluate(
    checkpoint: Checkpoint,
    episodes: usize,
) -> Result<(EvaluationReport, Vec<MetricRow>)> {
    if episodes == 0 {
        return Err(Error::Config("episodes must be >= 1".into()));
    }
    let Checkpoint {
        scheme,
        seed,
        episodes_trained,
        mut runner,
        ..
    } = checkpoint;
    let mut rows = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let stats = runner.run_episode(false)?;
        rows.push(MetricRow::new(scheme, seed, Phase::Test, ep, &stats));
    }
    let report = EvaluationReport {
        scheme,
        seed,
        episodes_trained,
        episodes,
        normalized_success: mean(rows.iter().map(|r| r.normalized_success)),
        normalized_failure: mean(rows.iter().map(|r| r.normalized_failure)),
        successes_per_episode: mean(rows.iter().map(|r| r.successes as f64)),
        mean_team_reward: mean(rows.iter().map(|r| r.mean_team_reward)),
    };
    Ok((report, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.env.num_mds = 2;
        cfg.train.episodes = 6;
        cfg.train.episodes_per_update = 2;
        cfg.train.minibatch = 10;
        cfg.run.seeds = vec![0, 1];
        cfg.run.test_episodes = 3;
        cfg.run.train_tail = 2;
        cfg.run.out_dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn parses_counts() {
        assert_eq!(parse_counts("2..8").unwrap(), (2..=8).collect::<Vec<_>>());
        assert_eq!(parse_counts("2..=4").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_counts("3, 5,7").unwrap(), vec![3, 5, 7]);
        for bad in ["", "8..2", "0..3", "a", "2..x"] {
            assert_eq!(parse_counts(bad).unwrap_err().exit_code(), 2, "{bad}");
        }
    }

    #[test]
    fn rows_and_summary_shape() {
        let dir = std::env::temp_dir().join("intent-emcom-run-shape");
        let report = execute(&tiny(&dir)).unwrap();
        assert!(report.summary.failures.is_empty());
        // learners: 2 seeds * (6 + 3); fixed: 2 seeds * 3
        assert_eq!(report.rows.len(), 2 * 2 * 9 + 2 * 2 * 3);
        let perfect = report.summary.scheme(Scheme::Perfect).unwrap();
        assert_eq!(perfect.test_success.mean, 1.0);
        assert!(perfect.train_tail_success.is_none());
        assert_eq!(
            report
                .summary
                .scheme(Scheme::Proposed)
                .unwrap()
                .per_seed
                .len(),
            2
        );
        assert!(report
            .summary
            .scheme(Scheme::SelfLearning)
            .unwrap()
            .train_tail_success
            .is_some());
    }

    #[test]
    fn parallel_jobs_match_serial() {
        let dir = std::env::temp_dir().join("intent-emcom-run-par");
        let serial = execute(&tiny(&dir)).unwrap();
        let mut cfg = tiny(&dir);
        cfg.run.jobs = 3;
        let parallel = execute(&cfg).unwrap();
        assert_eq!(serial.rows, parallel.rows);
        assert_eq!(serial.summary, parallel.summary);
    }

    #[test]
    fn evaluate_reproduces_test_phase() {
        let dir = std::env::temp_dir().join("intent-emcom-run-eval");
        let cfg = tiny(&dir);
        let cell = run_cell(&cfg, Scheme::Proposed, 1).unwrap();
        let ck = Checkpoint::from_json(&cell.checkpoint.to_json().unwrap()).unwrap();
        let (_, rows) = evaluate(ck, 3).unwrap();
        let test: Vec<_> = cell
            .rows
            .into_iter()
            .filter(|r| r.phase == Phase::Test)
            .collect();
        assert_eq!(rows, test);
    }
}

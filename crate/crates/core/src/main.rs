use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use intent_emcom::harness::checkpoint::Checkpoint;
use intent_emcom::harness::config::{ExperimentConfig, Scheme};
use intent_emcom::harness::{evaluate, metrics, parse_counts, run_experiment, sweep_users};
use intent_emcom::{Error, Result};

/// Intent-based network slicing with learned emergent communication.
#[derive(Debug, Parser)]
#[command(name = "intent-emcom", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train and test the configured schemes, writing metrics, summary and charts.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Run only this scheme (proposed, perfect, random, self-learning).
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat the experiment for several numbers of MDs.
    SweepUsers {
        #[arg(long)]
        config: PathBuf,
        /// Inclusive range such as 2..8, or a list such as 2,4,8.
        #[arg(long, default_value = "2..8")]
        counts: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run greedy test episodes from a saved checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 500)]
        episodes: usize,
        /// Optional CSV destination for the per-episode rows.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and check a configuration file without running anything.
    ValidateConfig { path: PathBuf },
}

fn load_config(path: &Path, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = out {
        cfg.run.out_dir = out;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            scheme,
            out,
        } => {
            let mut cfg = load_config(&config, out)?;
            if let Some(seed) = seed {
                cfg.run.seeds = vec![seed];
            }
            if let Some(name) = scheme {
                cfg.run.schemes = vec![name.parse::<Scheme>()?];
            }
            let report = run_experiment(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report.summary)?);
            eprintln!("outputs written to {}", cfg.run.out_dir.display());
            if !report.summary.failures.is_empty() {
                return Err(Error::Contract(format!(
                    "{} cell(s) failed",
                    report.summary.failures.len()
                )));
            }
        }
        Command::SweepUsers {
            config,
            counts,
            out,
        } => {
            let cfg = load_config(&config, out)?;
            let counts = parse_counts(&counts)?;
            let report = sweep_users(&cfg, &counts, true)?;
            println!("{}", serde_json::to_string_pretty(&report.rows)?);
            eprintln!("sweep written to {}", cfg.run.out_dir.display());
            if !report.failures.is_empty() {
                return Err(Error::Contract(format!(
                    "{} cell(s) failed",
                    report.failures.len()
                )));
            }
        }
        Command::Evaluate {
            checkpoint,
            episodes,
            out,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let (report, rows) = evaluate(ck, episodes)?;
            if let Some(path) = out {
                metrics::write_rows(std::fs::File::create(path)?, &rows)?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::ValidateConfig { path } => {
            let cfg = ExperimentConfig::load(&path)?;
            let sc = cfg.scenario()?;
            println!(
                "ok: N={} M={} T={} schemes={:?} seeds={:?}",
                sc.num_mds(),
                sc.num_slices(),
                sc.env.episode_len,
                cfg.run.schemes.iter().map(|s| s.name()).collect::<Vec<_>>(),
                cfg.run.seeds
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

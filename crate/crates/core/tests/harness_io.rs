//! Output files, determinism, checkpoints and the command line tool.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use intent_emcom::env::SliceCatalog;
use intent_emcom::harness::checkpoint::{Checkpoint, Runner};
use intent_emcom::harness::config::{ExperimentConfig, Scheme};
use intent_emcom::harness::metrics::{mean_std, read_rows, Phase};
use intent_emcom::harness::run::{execute, run_experiment, sweep_users, RunSummary};
use intent_emcom::Scenario;

fn small(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.env.num_mds = 3;
    cfg.train.episodes = 24;
    cfg.train.episodes_per_update = 4;
    cfg.train.minibatch = 20;
    cfg.run.seeds = vec![0, 1, 2];
    cfg.run.test_episodes = 10;
    cfg.run.train_tail = 8;
    cfg.run.out_dir = out.to_path_buf();
    cfg
}

#[test]
fn identical_runs_write_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let a = small(&tmp.path().join("a"));
    let b = small(&tmp.path().join("b"));
    run_experiment(&a).unwrap();
    run_experiment(&b).unwrap();
    for file in [
        "metrics.csv",
        "summary.json",
        "success_vs_episode.svg",
        "failure_vs_episode.svg",
    ] {
        let x = fs::read(a.run.out_dir.join(file)).unwrap();
        let y = fs::read(b.run.out_dir.join(file)).unwrap();
        assert!(x == y, "{file} differs");
    }
    let c1 = fs::read(a.run.out_dir.join("checkpoints/proposed-seed2.json")).unwrap();
    let c2 = fs::read(b.run.out_dir.join("checkpoints/proposed-seed2.json")).unwrap();
    assert!(c1 == c2);
}

#[test]
fn metrics_file_schema_and_aggregates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path());
    run_experiment(&cfg).unwrap();
    let bytes = fs::read(tmp.path().join("metrics.csv")).unwrap();
    let text = String::from_utf8(bytes.clone()).expect("utf-8");
    assert!(!text.contains('\r'));
    assert!(text.starts_with("scheme,seed,phase,episode,"));
    let rows = read_rows(&bytes[..]).unwrap();

    // learners log train + test, fixed policies test only
    let seeds = cfg.run.seeds.len();
    let expected = 2 * seeds * (cfg.train.episodes + cfg.run.test_episodes)
        + 2 * seeds * cfg.run.test_episodes;
    assert_eq!(rows.len(), expected);
    for r in &rows {
        assert!((0.0..=1.0).contains(&r.normalized_success));
        assert!((r.normalized_success + r.normalized_failure - 1.0).abs() <= 1e-12);
        assert_eq!(r.decisions, cfg.env.num_mds * cfg.env.episode_len);
    }
    let mut keys: Vec<_> = rows
        .iter()
        .map(|r| (r.scheme, r.seed, r.phase, r.episode))
        .collect();
    keys.sort();
    keys.dedup();
    assert_eq!(
        keys.len(),
        rows.len(),
        "one row per (episode, scheme, seed)"
    );

    // summary recomputed from the raw rows
    let summary: RunSummary =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("summary.json")).unwrap())
            .unwrap();
    for s in &summary.schemes {
        let mut per_seed: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        let mut tails: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.scheme == s.scheme) {
            match r.phase {
                Phase::Test => per_seed
                    .entry(r.seed)
                    .or_default()
                    .push(r.normalized_success),
                Phase::Train if r.episode >= cfg.train.episodes - cfg.run.train_tail => {
                    tails.entry(r.seed).or_default().push(r.normalized_success)
                }
                Phase::Train => {}
            }
        }
        let means: Vec<f64> = per_seed
            .values()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
            .collect();
        let (m, sd) = mean_std(&means);
        assert!((s.test_success.mean - m).abs() <= 1e-12);
        assert!((s.test_success.std - sd).abs() <= 1e-12);
        if let Some(t) = s.train_tail_success {
            let means: Vec<f64> = tails
                .values()
                .map(|v| v.iter().sum::<f64>() / v.len() as f64)
                .collect();
            assert!((t.mean - mean_std(&means).0).abs() <= 1e-12);
        } else {
            assert!(tails.is_empty());
        }
    }
    assert_eq!(
        summary.scheme(Scheme::Perfect).unwrap().test_success.mean,
        1.0
    );
    assert_eq!(summary.smoothing_window, 50);
    let svg = fs::read_to_string(tmp.path().join("success_vs_episode.svg")).unwrap();
    assert!(svg.contains("window 50"));
}

fn resume_matches(scheme: Scheme) {
    let mut train = ExperimentConfig::default().train;
    train.episodes_per_update = 4;
    train.minibatch = 20;
    let sc = Scenario::standard(4, 10).unwrap();
    let mut live = Runner::new(scheme, sc, &train, 17).unwrap();
    // stop mid-window so the rollout buffer is part of the saved state
    for _ in 0..6 {
        live.run_episode(true).unwrap();
    }
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("ck.json");
    Checkpoint::new(scheme, 17, live.clone())
        .save(&path)
        .unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(
        loaded.to_json().unwrap(),
        fs::read_to_string(&path).unwrap(),
        "round trip is not bit-exact"
    );
    let mut resumed = loaded.runner;
    for ep in 0..10 {
        let learn = ep < 7;
        assert_eq!(
            live.run_episode(learn).unwrap(),
            resumed.run_episode(learn).unwrap(),
            "episode {ep}"
        );
    }
    assert_eq!(
        Checkpoint::new(scheme, 17, live).to_json().unwrap(),
        Checkpoint::new(scheme, 17, resumed).to_json().unwrap()
    );
}

#[test]
fn proposed_resume_continues_identically() {
    resume_matches(Scheme::Proposed);
}

#[test]
fn self_learning_resume_continues_identically() {
    resume_matches(Scheme::SelfLearning);
}

#[test]
fn zero_learning_rate_behaves_like_random_assignment() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.env.num_mds = 5;
    cfg.train.learning_rate = 0.0;
    cfg.train.episodes = 400;
    cfg.train.episodes_per_update = 8;
    cfg.train.minibatch = 64;
    cfg.run.seeds = vec![3];
    cfg.run.test_episodes = 1;
    cfg.run.schemes = vec![Scheme::Proposed, Scheme::SelfLearning];
    let report = execute(&cfg).unwrap();
    let rate = {
        // E|feasible| / M by enumeration over sampled intents
        let catalog = SliceCatalog::log_spaced(10).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(77);
        let ranges = intent_emcom::env::IntentRanges::default();
        let n = 50_000;
        let hits: usize = (0..n)
            .map(|_| {
                let i = intent_emcom::env::sample_intent(&mut rng, &ranges);
                catalog
                    .feasibility_mask(&i)
                    .unwrap()
                    .iter()
                    .filter(|&&b| b)
                    .count()
            })
            .sum();
        hits as f64 / (n * 10) as f64
    };
    for scheme in [Scheme::Proposed, Scheme::SelfLearning] {
        let train: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| r.scheme == scheme && r.phase == Phase::Train)
            .map(|r| r.normalized_success)
            .collect();
        let mean = train.iter().sum::<f64>() / train.len() as f64;
        assert!((mean - rate).abs() <= 0.03, "{scheme}: {mean} vs {rate}");
        let first: f64 = train[..200].iter().sum::<f64>() / 200.0;
        let last: f64 = train[200..].iter().sum::<f64>() / 200.0;
        assert!(
            (first - last).abs() <= 0.03,
            "{scheme} drifted: {first} -> {last}"
        );
    }
    let ck = &report
        .cells
        .iter()
        .find(|c| c.scheme == Scheme::Proposed)
        .unwrap()
        .checkpoint;
    let fresh = Runner::new(Scheme::Proposed, cfg.scenario().unwrap(), &cfg.train, 3).unwrap();
    match (&ck.runner, &fresh) {
        (Runner::Proposed(a), Runner::Proposed(b)) => {
            assert_eq!(a.agents.net_actor.net, b.agents.net_actor.net);
            assert_eq!(a.agents.critic.net, b.agents.critic.net);
        }
        _ => unreachable!(),
    }
}

#[test]
fn single_count_sweep_has_one_row_per_scheme() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.run.seeds = vec![0];
    let report = sweep_users(&cfg, &[4], true).unwrap();
    assert_eq!(report.rows.len(), cfg.run.schemes.len());
    let perfect = report.get(4, Scheme::Perfect).unwrap();
    assert_eq!(
        perfect.successes_per_episode,
        (4 * cfg.env.episode_len) as f64
    );
    assert_eq!(perfect.gap_to_perfect_successes, Some(0.0));
    for f in [
        "sweep.csv",
        "sweep.json",
        "success_vs_users.svg",
        "successes_vs_users.svg",
        "n4/metrics.csv",
    ] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
}

#[test]
fn perfect_absolute_successes_strictly_increase_with_users() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.run.schemes = vec![Scheme::Perfect];
    cfg.run.seeds = vec![0];
    let report = sweep_users(&cfg, &[2, 3, 4, 5, 6, 7, 8], false).unwrap();
    let counts: Vec<f64> = (2..=8)
        .map(|n| {
            report
                .get(n, Scheme::Perfect)
                .unwrap()
                .successes_per_episode
        })
        .collect();
    for (k, c) in counts.iter().enumerate() {
        assert_eq!(*c, ((k + 2) * 15) as f64);
    }
}

#[test]
fn unwritable_output_is_a_startup_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let cfg = small(&blocker.join("sub"));
    let err = run_experiment(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_intent-emcom"))
}

#[test]
fn cli_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("good.toml");
    let mut cfg = small(&tmp.path().join("out"));
    cfg.run.seeds = vec![0, 1];
    fs::write(&good, cfg.to_toml_string().unwrap()).unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(
        &bad,
        "schema_version = 1\n[env]\nturbo = true\n[train]\n[run]\n",
    )
    .unwrap();

    let code = |args: &[&str]| {
        cli()
            .args(args)
            .env("RUST_LOG", "off")
            .output()
            .unwrap()
            .status
            .code()
    };
    let g = good.to_str().unwrap();
    assert_eq!(code(&["validate-config", g]), Some(0));
    assert_eq!(code(&["validate-config", bad.to_str().unwrap()]), Some(2));
    assert_eq!(code(&["validate-config", "/nonexistent/x.toml"]), Some(2));
    assert_eq!(code(&["train", "--config", g, "--scheme", "nope"]), Some(2));
    assert_eq!(code(&["no-such-command"]), Some(2));
    assert_eq!(
        code(&[
            "evaluate",
            "--checkpoint",
            "/nonexistent.json",
            "--episodes",
            "3"
        ]),
        Some(2)
    );

    let out = tmp.path().join("cli-run");
    let o = out.to_str().unwrap();
    assert_eq!(
        code(&["train", "--config", g, "--seed", "5", "--scheme", "proposed", "--out", o]),
        Some(0)
    );
    let rows = read_rows(fs::File::open(out.join("metrics.csv")).unwrap()).unwrap();
    assert!(rows
        .iter()
        .all(|r| r.seed == 5 && r.scheme == Scheme::Proposed));
    let ck = out.join("checkpoints/proposed-seed5.json");
    let eval = cli()
        .args([
            "evaluate",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--episodes",
            "4",
        ])
        .output()
        .unwrap();
    assert_eq!(eval.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(json["episodes"], 4);
    assert_eq!(json["episodes_trained"], cfg.train.episodes);

    let sweep_out = tmp.path().join("cli-sweep");
    assert_eq!(
        code(&[
            "sweep-users",
            "--config",
            g,
            "--counts",
            "2..3",
            "--out",
            sweep_out.to_str().unwrap()
        ]),
        Some(0)
    );
    assert!(sweep_out.join("sweep.csv").exists());
    assert_eq!(
        code(&["sweep-users", "--config", g, "--counts", "5..2"]),
        Some(2)
    );
}

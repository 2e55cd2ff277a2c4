use std::fs;

use semsync_core::harness::{
    collect, export, read_results_csv, simulate, structural_checks, sweep, Manifest, RunConfig,
};
use semsync_core::policies::{OffloadPolicy, UpdatePolicy};
use semsync_core::sim::EventTrace;

fn short(len: f64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.workload.episode_len = len;
    cfg
}

fn traced(cfg: &RunConfig) -> Vec<u8> {
    let file = tempfile::NamedTempFile::new().unwrap();
    let mut trace = EventTrace::new(file.reopen().unwrap());
    simulate(cfg, None, Some(&mut trace)).unwrap();
    trace.flush().unwrap();
    drop(trace);
    fs::read(file.path()).unwrap()
}

#[test]
fn event_trace_is_reproducible_jsonl() {
    let mut cfg = short(5.0);
    cfg.policy.update = UpdatePolicy::Qaoi;
    cfg.policy.offload = OffloadPolicy::Expert;
    let a = traced(&cfg);
    assert_eq!(a, traced(&cfg));
    let text = String::from_utf8(a).unwrap();
    let mut last = 0.0;
    let mut n = 0;
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let t = v["t"].as_f64().unwrap();
        assert!(t >= last, "time went back: {t} < {last}");
        last = t;
        n += 1;
    }
    assert!(n > 500, "{n}");
}

#[test]
fn arrival_counts_match_the_poisson_rate() {
    for seed in 1..=3 {
        let mut cfg = short(200.0);
        cfg.seed = seed;
        cfg.workload.lambda_in = 50.0;
        cfg.policy.update = UpdatePolicy::Fixed;
        cfg.policy.offload = OffloadPolicy::Expert;
        let m = simulate(&cfg, None, None).unwrap().metrics;
        // Poisson(10 000): three standard deviations is 300
        assert!(
            (m.arrivals as f64 - 10_000.0).abs() <= 300.0,
            "seed {seed}: {}",
            m.arrivals
        );
    }
}

#[test]
fn collection_without_exploration_is_pure_expert() {
    let mut cfg = RunConfig::default();
    cfg.collect.lambdas = vec![20.0, 50.0];
    cfg.collect.episode_len = 10.0;
    cfg.collect.explore_eps = 0.0;
    let data = collect(&cfg).unwrap();
    assert!(data.len() > 500);
    assert!(data.iter().all(|s| s.from_expert && s.y_ap == s.action_local));

    cfg.collect.explore_eps = 0.1;
    let data = collect(&cfg).unwrap();
    let flipped = data.iter().filter(|s| !s.from_expert).count() as f64 / data.len() as f64;
    assert!((flipped - 0.1).abs() < 0.03, "{flipped}");
}

#[test]
fn collection_count_tracks_the_arrival_mix() {
    let mut cfg = RunConfig::default();
    cfg.collect.lambdas = vec![10.0, 30.0];
    cfg.collect.episode_len = 50.0;
    let n = collect(&cfg).unwrap().len() as f64;
    // 2000 expected arrivals, sd about 45
    assert!((n - 2000.0).abs() < 200.0, "{n}");
}

#[test]
fn export_round_trips_and_is_deterministic() {
    let mut cfg = short(20.0);
    cfg.sweep.lambdas = vec![20.0, 55.0];
    cfg.sweep.policies = vec![UpdatePolicy::Fixed, UpdatePolicy::Qaoi, UpdatePolicy::ContentAware];
    cfg.sweep.seeds = vec![1, 2];
    let set = sweep(&cfg, None).unwrap();
    assert_eq!(set.rows.len(), 12);
    assert_eq!(set.histograms.len(), 12);
    assert!(structural_checks(&cfg, &set).iter().all(|c| c.passed));

    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    export(d1.path(), &cfg, &set, "test").unwrap();
    export(d2.path(), &cfg, &sweep(&cfg, None).unwrap(), "test").unwrap();
    assert_eq!(read_results_csv(&d1.path().join("results.csv")).unwrap(), set.rows);
    assert_eq!(
        fs::read(d1.path().join("results.csv")).unwrap(),
        fs::read(d2.path().join("results.csv")).unwrap()
    );

    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(d1.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.config, cfg);
    assert_eq!(manifest.seeds, vec![cfg.seed, 1, 2]);
    for f in &manifest.files {
        assert!(d1.path().join(f).exists(), "{f}");
    }
    let header = fs::read_to_string(d1.path().join("results.csv")).unwrap();
    assert!(header.lines().next().unwrap().split(',').any(|c| c == "seed"));
}

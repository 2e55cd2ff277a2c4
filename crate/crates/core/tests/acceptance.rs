//! End-to-end acceptance suite. Prints one line per criterion and exits
//! nonzero if any of them fails. Artifacts land in
//! `$CARGO_TARGET_TMPDIR/acceptance`.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semsync_core::ctde::{
    build_samples, joint_loss, label_sn, replay_labels, CalibrationThresholds, LossWeights, ReplayBehavior,
    TrainingSample,
};
use semsync_core::harness::{
    collect, evaluate_dsem, export, find_summary, summarize, sweep, train_model, write_results_csv, RunConfig, RunSet,
};
use semsync_core::model::LearnedModel;
use semsync_core::node::RawState;
use semsync_core::policies::{OffloadPolicy, UpdatePolicy};
use semsync_core::semantics::EncoderConfig;
use semsync_core::system::{run_episode, EnvConfig, EpisodeLog, EpisodeSpec, SlotRecord, TaskRecord};
use semsync_core::workload::{Decision, Outcome};
use semsync_nn::{grad_check, grad_check_five_point};

const GRAD_SEEDS: u64 = 100;
const GRAD_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;
/// Five-point step retried when round-off at the central step masks a tiny gradient.
const GRAD_STEP_FIVE: f64 = 2e-3;
const GRAD_BUDGET_S: f64 = 120.0;

const LITTLE_LAMBDA: f64 = 30.0;
const LITTLE_LEN: f64 = 500.0;
const LITTLE_TOL: f64 = 0.10;
const LITTLE_MIN_SUCCESS: f64 = 0.999;

const FIXED_TARGET: f64 = 20.0;
const FIXED_TOL: f64 = 0.1;
const QAOI_LAMBDA: f64 = 60.0;
const QAOI_MIN: f64 = 45.0;
const QAOI_MAX: f64 = 50.0;

const ORACLE_RECORDS: usize = 1000;

const MIN_DATASET: usize = 30_000;
const CONVERGENCE_RATIO: f64 = 0.5;
const TRAIN_BUDGET_S: f64 = 900.0;

const LOW_LOAD_MIN_SUCCESS: f64 = 0.99;
const SATURATION_LAMBDA: f64 = 55.0;
const SATURATION_MIN_SUCCESS: f64 = 0.95;
const SPARSE_LAMBDA: f64 = 15.0;
const SPARSE_MAX_FREQ: f64 = 5.0;
const MIN_SEEDS: usize = 3;

const ABLATION_LAMBDA: f64 = 50.0;
const ABLATION_GAP: f64 = 0.1;

const INTERVAL_LOW: f64 = 20.0;
const INTERVAL_HIGH: f64 = 60.0;
const MIN_BINS: usize = 5;

const SEMANTIC: &str = "semantic";

struct Suite {
    failed: usize,
}

impl Suite {
    fn report(&mut self, name: &str, passed: bool, detail: String) {
        let tag = if passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {name}: {detail}");
        if !passed {
            self.failed += 1;
        }
    }
}

fn random_sample<R: Rng>(rng: &mut R) -> TrainingSample {
    let mut state = || -> [f64; 6] { std::array::from_fn(|_| rng.random_range(0.0..2.0)) };
    let (x_t, x_prev, x_hat) = (state(), state(), state());
    let action_local = rng.random_bool(0.4);
    let (t_loc, t_off) = (rng.random_range(0.05..2.5), rng.random_range(0.05..2.5));
    TrainingSample {
        x_t,
        x_prev,
        has_prev: rng.random_bool(0.9),
        x_hat,
        updated: rng.random_bool(0.3),
        qos: rng.random_range(0.0..0.01),
        aoi_norm: rng.random_range(0.0..0.3),
        d_down_norm: rng.random_range(0.02..0.2),
        ap_idle: rng.random_range(0..3) as f64,
        ap_qlen_norm: rng.random_range(0.0..1.0),
        ap_residual_norm: rng.random_range(0.0..1.0),
        y_sn: rng.random_bool(0.3),
        y_ap: rng.random_bool(0.4),
        y_success: rng.random_bool(0.9),
        action_local,
        from_expert: rng.random_bool(0.9),
        t_loc,
        t_off,
        t_actual: if action_local { t_loc } else { t_off },
        tau: 1.8,
    }
}

/// Full encoder, both heads and the joint loss, at reduced width so that a
/// hundred complete finite-difference sweeps fit the time budget.
fn gradient_integrity(s: &mut Suite) {
    let start = Instant::now();
    let w = LossWeights::default();
    let (mut worst, mut coarse, mut failed) = (0.0f64, 0, Vec::new());
    for seed in 0..GRAD_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = EncoderConfig {
            d_model: 8,
            n_heads: 2,
            d_ffn: 12,
            ..EncoderConfig::default()
        };
        let mut m = LearnedModel::with_hidden(cfg, 6, &mut rng).unwrap();
        let batch: Vec<TrainingSample> = (0..4).map(|_| random_sample(&mut rng)).collect();
        let refs: Vec<&TrainingSample> = batch.iter().collect();
        let arch = m.arch.clone();
        // dropout off, as for every gradient check; the rng is never drawn from
        let loss = |p: &mut _, g| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            joint_loss(&arch, p, &refs, &w, false, &mut rng, g).unwrap().total
        };
        let mut err = grad_check(&mut m.params, GRAD_STEP, loss).max_rel_error;
        if err >= GRAD_TOL {
            coarse += 1;
            err = grad_check_five_point(&mut m.params, GRAD_STEP_FIVE, loss).max_rel_error;
        }
        worst = worst.max(err);
        if err >= GRAD_TOL {
            failed.push(seed);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    s.report(
        "gradient integrity",
        failed.is_empty() && secs < GRAD_BUDGET_S,
        format!(
            "{GRAD_SEEDS} seeds, worst rel error {worst:.2e} (< {GRAD_TOL:e}), {coarse} retried five-point at h={GRAD_STEP_FIVE:e}, \
             failing seeds {failed:?}, {secs:.1}s (< {GRAD_BUDGET_S}s)"
        ),
    );
}

fn env(lambda: f64, len: f64) -> EnvConfig {
    let mut e = EnvConfig::default();
    e.workload.lambda_in = lambda;
    e.workload.episode_len = len;
    e
}

fn queueing_sanity(s: &mut Suite) {
    let spec = EpisodeSpec::new(
        env(LITTLE_LAMBDA, LITTLE_LEN),
        UpdatePolicy::Fixed,
        OffloadPolicy::AllOffload,
        1,
    );
    let m = run_episode(spec, None).unwrap().metrics;
    let l = m.sn_mean_in_system;
    let lw = m.sn_throughput * m.sn_mean_sojourn;
    let rel = (l - lw).abs() / l;
    s.report(
        "queueing sanity",
        rel <= LITTLE_TOL && m.success_rate >= LITTLE_MIN_SUCCESS && m.offloaded == m.arrivals,
        format!(
            "L {l:.4} vs lambda*W {lw:.4} (rel {rel:.4} <= {LITTLE_TOL}), success {:.5} (>= {LITTLE_MIN_SUCCESS})",
            m.success_rate
        ),
    );
}

fn baseline_frequencies(s: &mut Suite) {
    let fixed = run_episode(
        EpisodeSpec::new(env(30.0, 500.0), UpdatePolicy::Fixed, OffloadPolicy::Expert, 1),
        None,
    )
    .unwrap()
    .metrics
    .update_freq;
    let qaoi = run_episode(
        EpisodeSpec::new(env(QAOI_LAMBDA, 500.0), UpdatePolicy::Qaoi, OffloadPolicy::Expert, 1),
        None,
    )
    .unwrap()
    .metrics
    .update_freq;
    s.report(
        "baseline frequencies",
        (fixed - FIXED_TARGET).abs() <= FIXED_TOL && (QAOI_MIN..=QAOI_MAX).contains(&qaoi),
        format!(
            "fixed {fixed:.3}/s ({FIXED_TARGET} +- {FIXED_TOL}), qaoi at lambda {QAOI_LAMBDA} {qaoi:.3}/s \
             (in [{QAOI_MIN}, {QAOI_MAX}])"
        ),
    );
}

/// Occupancy sweeps through both thresholds; most slots carry a task, a tenth
/// of them exploratory.
fn crafted_log() -> EpisodeLog {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut log = EpisodeLog::default();
    let mut k = 0usize;
    log.slots.push(SlotRecord {
        t: 0.0,
        x: RawState::default(),
        occupancy: 0.0,
    });
    while log.tasks.len() < ORACLE_RECORDS {
        k += 1;
        let occupancy = (0.5 + 0.5 * (k as f64 / 41.0).sin() + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
        let x = RawState {
            idle_cores: 0.0,
            qlen_norm: occupancy * 25.0,
            hol_wait: occupancy,
            aoi: 0.0,
            last_workload: 1.0,
            arrival_est: 0.02,
        };
        log.slots.push(SlotRecord {
            t: k as f64 * 0.01,
            x,
            occupancy,
        });
        if rng.random_bool(0.8) {
            let expert = if rng.random_bool(0.5) {
                Decision::Local
            } else {
                Decision::Offload
            };
            log.tasks.push(TaskRecord {
                id: log.tasks.len(),
                t: k as f64 * 0.01 + 0.004,
                slot: k,
                c_k: 1e8,
                d_k: 8e6,
                ap_idle: 0.0,
                ap_qlen_norm: 0.1,
                ap_residual: 0.1,
                d_down_est: 0.165,
                t_loc_est: rng.random_range(0.1..0.5),
                t_off_est: rng.random_range(0.1..0.5),
                expert,
                action: expert,
                from_expert: rng.random_bool(0.9),
                outcome: Outcome::Success,
                t_actual: 0.3,
            });
        }
    }
    log
}

fn label_oracle(s: &mut Suite) {
    let log = crafted_log();
    let thr = CalibrationThresholds::default();
    let env = EnvConfig::default();
    let mut disagree = 0usize;
    let mut checked = 0usize;

    for behavior in [ReplayBehavior::EXACT, ReplayBehavior::default()] {
        let replay = replay_labels(&log, &thr, &behavior, &mut ChaCha8Rng::seed_from_u64(5));
        let mut last = 0.0;
        for (r, slot) in replay.iter().zip(&log.slots).skip(1) {
            let aoi = slot.t - last;
            let y = aoi >= 0.5 || slot.occupancy >= 0.5;
            checked += 1;
            disagree += usize::from(r.y_sn != y || label_sn(aoi, slot.occupancy, &thr) != y);
            if r.updated {
                last = slot.t;
            }
        }
    }

    let samples = build_samples(&log, &env, &thr, &ReplayBehavior::default(), 3).unwrap();
    for (smp, r) in samples.iter().zip(&log.tasks) {
        let occ = log.slots[r.slot].occupancy;
        let y = if r.from_expert {
            r.expert == Decision::Local
        } else {
            occ >= 0.5 || r.t_off_est - r.t_loc_est >= 0.05
        };
        checked += 1;
        disagree += usize::from(smp.y_ap != y);
    }
    s.report(
        "label oracle",
        disagree == 0 && samples.len() == ORACLE_RECORDS,
        format!("{checked} labels over {ORACLE_RECORDS} task records, {disagree} disagreements"),
    );
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn headline(s: &mut Suite, cfg: &RunConfig, set: &RunSet) {
    let sum = summarize(&set.rows);
    let sem = |l: f64| find_summary(&sum, l, SEMANTIC).expect("semantic row");
    let seeds_ok = sum.iter().all(|r| r.n_seeds >= MIN_SEEDS);

    let low: Vec<_> = cfg
        .sweep
        .lambdas
        .iter()
        .filter(|l| **l <= 50.0)
        .map(|&l| (l, sem(l).success_rate_mean))
        .collect();
    let a = low.iter().all(|(_, v)| *v >= LOW_LOAD_MIN_SUCCESS);

    let sat = sem(SATURATION_LAMBDA).success_rate_mean;
    let baselines: Vec<(String, f64)> = sum
        .iter()
        .filter(|r| r.lambda == SATURATION_LAMBDA && r.policy != SEMANTIC)
        .map(|r| (r.policy.clone(), r.success_rate_mean))
        .collect();
    let b = sat >= SATURATION_MIN_SUCCESS && baselines.iter().all(|(_, v)| sat > *v);

    let freqs: Vec<_> = cfg
        .sweep
        .lambdas
        .iter()
        .map(|&l| (l, sem(l).update_freq_mean))
        .collect();
    let c = freqs.iter().all(|(l, f)| f < l);

    let sparse = sem(SPARSE_LAMBDA).update_freq_mean;
    let d = sparse <= SPARSE_MAX_FREQ;

    let fmt = |v: &[(f64, f64)]| {
        v.iter()
            .map(|(l, x)| format!("{l}:{x:.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let fmt_b = baselines
        .iter()
        .map(|(p, x)| format!("{p}:{x:.4}"))
        .collect::<Vec<_>>()
        .join(" ");
    let ok = |x: bool| if x { "ok" } else { "FAILED" };
    s.report(
        "headline trend",
        seeds_ok && a && b && c && d,
        format!(
            "(a) {} success lambda<=50 >= {LOW_LOAD_MIN_SUCCESS}: {}; (b) {} semantic {sat:.4} at {SATURATION_LAMBDA} \
             (>= {SATURATION_MIN_SUCCESS}, strictly above {fmt_b}); (c) {} update/s < lambda: {}; (d) {} {sparse:.3}/s \
             at {SPARSE_LAMBDA} (<= {SPARSE_MAX_FREQ}); seeds per cell >= {MIN_SEEDS}: {}",
            ok(a),
            fmt(&low),
            ok(b),
            ok(c),
            fmt(&freqs),
            ok(d),
            ok(seeds_ok)
        ),
    );
}

fn intervals(s: &mut Suite, set: &RunSet) {
    let sem_rows = |l: f64| {
        set.rows
            .iter()
            .zip(&set.histograms)
            .filter(move |(r, _)| r.policy == SEMANTIC && r.lambda == l)
    };
    let bins: Vec<usize> = sem_rows(INTERVAL_LOW).map(|(_, h)| h.nonempty_bins()).collect();
    let spread = !bins.is_empty() && bins.iter().all(|b| *b >= MIN_BINS);
    let med_low = mean(sem_rows(INTERVAL_LOW).map(|(r, _)| r.median_interval));
    let med_high = mean(sem_rows(INTERVAL_HIGH).map(|(r, _)| r.median_interval));
    s.report(
        "interval non-degeneracy",
        spread && med_high < med_low,
        format!(
            "nonempty bins at lambda {INTERVAL_LOW} per seed {bins:?} (>= {MIN_BINS}); median interval \
             {med_high:.3}s at {INTERVAL_HIGH} vs {med_low:.3}s at {INTERVAL_LOW} (must be lower)"
        ),
    );
}

fn determinism(s: &mut Suite, cfg: &RunConfig, model: &LearnedModel, reference: &RunSet) {
    let mut small = cfg.clone();
    small.sweep.lambdas = vec![SATURATION_LAMBDA];
    small.sweep.policies = vec![UpdatePolicy::Semantic, UpdatePolicy::Qaoi, UpdatePolicy::ContentAware];
    small.sweep.seeds = vec![cfg.sweep.seeds[0]];
    let a = sweep(&small, Some(model)).unwrap();
    let b = sweep(&small, Some(model)).unwrap();
    let same_rows = a == b;
    let matches_sweep = a
        .rows
        .iter()
        .all(|r| reference.rows.iter().any(|q| q.key() == r.key() && q == r));
    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_results_csv(&pa, &a.rows).unwrap();
    write_results_csv(&pb, &b.rows).unwrap();
    let same_csv = std::fs::read(&pa).unwrap() == std::fs::read(&pb).unwrap();
    s.report(
        "determinism",
        same_rows && matches_sweep && same_csv,
        format!(
            "{} repeated episodes: metrics identical {same_rows}, equal to sweep rows {matches_sweep}, CSV bytes identical {same_csv}",
            a.rows.len()
        ),
    );
}

fn out_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn main() {
    let mut s = Suite { failed: 0 };
    let cfg = RunConfig::default();

    gradient_integrity(&mut s);
    queueing_sanity(&mut s);
    baseline_frequencies(&mut s);
    label_oracle(&mut s);

    let data = collect(&cfg).unwrap();
    let start = Instant::now();
    let trained = train_model(&cfg, cfg.encoder, &data, |e, l| {
        if (e + 1) % 10 == 0 {
            eprintln!("  epoch {:>2} loss {l:.5}", e + 1);
        }
    })
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let curve = &trained.report.curve;
    let (first, last) = (curve[0], *curve.last().unwrap());
    s.report(
        "training convergence",
        data.len() >= MIN_DATASET
            && curve.len() == 60
            && cfg.train.batch == 256
            && last <= CONVERGENCE_RATIO * first
            && secs < TRAIN_BUDGET_S,
        format!(
            "{} samples (>= {MIN_DATASET}), {} epochs, batch {}, first {first:.4} last {last:.4} ratio {:.3} \
             (<= {CONVERGENCE_RATIO}), {secs:.0}s (< {TRAIN_BUDGET_S}s); holdout update recall {:.3}, offload accuracy {:.3}",
            data.len(),
            curve.len(),
            cfg.train.batch,
            last / first,
            trained.holdout.sn_positive_recall,
            trained.holdout.ap_accuracy
        ),
    );

    let set = sweep(&cfg, Some(&trained.model)).unwrap();
    headline(&mut s, &cfg, &set);

    let d1 = train_model(
        &cfg,
        EncoderConfig {
            d_sem: 1,
            ..cfg.encoder
        },
        &data,
        |_, _| {},
    )
    .unwrap();
    let mut abl_cfg = cfg.clone();
    abl_cfg.sweep.ablation_lambda = ABLATION_LAMBDA;
    let d1_set = evaluate_dsem(&abl_cfg, &d1.model).unwrap();
    let s1 = mean(d1_set.rows.iter().map(|r| r.success_rate));
    let s3 = mean(
        set.rows
            .iter()
            .filter(|r| r.policy == SEMANTIC && r.lambda == ABLATION_LAMBDA)
            .map(|r| r.success_rate),
    );
    s.report(
        "ablation trend",
        s1 <= s3 - ABLATION_GAP,
        format!("success d_sem=1 {s1:.4} vs d_sem=3 {s3:.4} at lambda {ABLATION_LAMBDA} (need gap >= {ABLATION_GAP})"),
    );

    intervals(&mut s, &set);
    determinism(&mut s, &cfg, &trained.model, &set);

    let mut all = set.clone();
    all.rows.extend(d1_set.rows);
    all.histograms.extend(d1_set.histograms);
    let dir = out_dir();
    match export(&dir, &cfg, &all, "acceptance") {
        Ok(files) => eprintln!("wrote {} files to {}", files.len(), dir.display()),
        Err(e) => eprintln!("export failed: {e}"),
    }

    println!("{} criteria failed", s.failed);
    if s.failed > 0 {
        std::process::exit(1);
    }
}

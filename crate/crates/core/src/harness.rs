//! Experiment orchestration: configuration files with overrides, closed-loop
//! runs, arrival-rate sweeps, the semantic-dimension ablation, and export of
//! result tables, manifests and update-interval histograms.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ctde::{
    build_samples, collect_traces, derive_seed, evaluate_heads, split_holdout, train, CalibrationThresholds,
    CollectConfig, HeadAccuracy, LossWeights, TrainConfig, TrainReport, TrainingSample,
};
use crate::link::LinkConfig;
use crate::model::LearnedModel;
use crate::node::ServerConfig;
use crate::par;
use crate::policies::{OffloadPolicy, UpdatePolicy};
use crate::semantics::EncoderConfig;
use crate::sim::{EventTrace, RngStreams, Stream};
use crate::system::{run_episode, CostConfig, EnvConfig, EpisodeOutput, EpisodeSpec, Metrics, PolicyParams};
use crate::workload::WorkloadConfig;
use crate::{Error, Result};

/// Version of the results.csv column layout, recorded in the manifest.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub update: UpdatePolicy,
    pub offload: OffloadPolicy,
    pub fixed_period: f64,
    pub qaoi_rate: f64,
    pub qaoi_capacity: f64,
    pub sdi_threshold: f64,
    pub explore_eps: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        let p = PolicyParams::default();
        Self {
            update: UpdatePolicy::Semantic,
            offload: OffloadPolicy::Semantic,
            fixed_period: p.fixed_period,
            qaoi_rate: p.qaoi_rate,
            qaoi_capacity: p.qaoi_capacity,
            sdi_threshold: p.sdi_threshold,
            explore_eps: p.explore_eps,
        }
    }
}

impl PolicyConfig {
    pub fn params(&self) -> PolicyParams {
        PolicyParams {
            fixed_period: self.fixed_period,
            qaoi_rate: self.qaoi_rate,
            qaoi_capacity: self.qaoi_capacity,
            sdi_threshold: self.sdi_threshold,
            explore_eps: self.explore_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    /// Update policies compared in a sweep. `semantic` pairs with the learned
    /// offloader, every other policy with `baseline_offload`.
    pub policies: Vec<UpdatePolicy>,
    pub baseline_offload: OffloadPolicy,
    pub seeds: Vec<u64>,
    pub ablation_dsem: Vec<usize>,
    pub ablation_lambda: f64,
    /// Update-interval histogram bin width and the start of the overflow bin.
    pub hist_bin: f64,
    pub hist_max: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![10.0, 15.0, 20.0, 30.0, 40.0, 50.0, 55.0, 60.0],
            policies: vec![
                UpdatePolicy::Semantic,
                UpdatePolicy::Fixed,
                UpdatePolicy::ContentAware,
                UpdatePolicy::Qaoi,
            ],
            baseline_offload: OffloadPolicy::Expert,
            seeds: vec![1, 2, 3],
            ablation_dsem: vec![1, 2, 3, 4, 5, 6],
            ablation_lambda: 50.0,
            hist_bin: 0.01,
            hist_max: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub params: PathBuf,
    pub dataset: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "results".into(),
            params: "results/model.bin".into(),
            dataset: "results/dataset.csv".into(),
        }
    }
}

/// Everything a run needs. Unknown keys anywhere are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed for single runs, collection and training.
    pub seed: u64,
    pub slot: f64,
    pub workload: WorkloadConfig,
    pub ap: ServerConfig,
    pub sn: ServerConfig,
    pub link: LinkConfig,
    pub encoder: EncoderConfig,
    pub policy: PolicyConfig,
    pub loss: LossWeights,
    pub thresholds: CalibrationThresholds,
    pub train: TrainConfig,
    pub collect: CollectConfig,
    pub cost: CostConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let env = EnvConfig::default();
        Self {
            seed: 1,
            slot: env.slot,
            workload: env.workload,
            ap: env.ap,
            sn: env.sn,
            link: env.link,
            encoder: EncoderConfig::default(),
            policy: PolicyConfig::default(),
            loss: LossWeights::default(),
            thresholds: CalibrationThresholds::default(),
            train: TrainConfig::default(),
            collect: CollectConfig::default(),
            cost: CostConfig::default(),
            sweep: SweepConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn env(&self) -> EnvConfig {
        EnvConfig {
            workload: self.workload,
            ap: self.ap,
            sn: self.sn,
            link: self.link,
            slot: self.slot,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env().validate()?;
        self.encoder.validate()?;
        self.loss.validate()?;
        if self.sweep.seeds.is_empty() || self.sweep.lambdas.is_empty() {
            return Err(Error::Config(
                "sweep needs at least one seed and one arrival rate".into(),
            ));
        }
        if !(self.sweep.hist_bin > 0.0 && self.sweep.hist_max > self.sweep.hist_bin) {
            return Err(Error::Config(
                "histogram needs a positive bin narrower than its range".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.train.holdout) {
            return Err(Error::Config("holdout fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// Parses `text` (TOML), applies `key.path=value` overrides and validates.
/// Override values are read as TOML literals, falling back to a string.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut root: toml::Table = toml::from_str(text)?;
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
        let value = parse_override_value(raw.trim());
        set_path(&mut root, key.trim(), value)?;
    }
    let cfg: RunConfig = toml::Value::Table(root).try_into()?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_override_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&probe) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p)?,
        None => String::new(),
    };
    parse_config(&text, overrides)
}

/// Loads trained parameters when a learned policy needs them.
pub fn load_model(cfg: &RunConfig) -> Result<LearnedModel> {
    let p = &cfg.output.params;
    if !p.exists() {
        return Err(Error::MissingParams(format!(
            "parameter file {} not found",
            p.display()
        )));
    }
    LearnedModel::load(p, cfg.encoder)
}

fn spec_for<'a>(
    cfg: &RunConfig,
    env: EnvConfig,
    update: UpdatePolicy,
    offload: OffloadPolicy,
    model: Option<&'a LearnedModel>,
    seed: u64,
) -> EpisodeSpec<'a> {
    let mut spec = EpisodeSpec::new(env, update, offload, seed);
    spec.params = cfg.policy.params();
    spec.cost = cfg.cost;
    spec.model = model;
    spec
}

/// One episode with the configured policies.
pub fn simulate(
    cfg: &RunConfig,
    model: Option<&LearnedModel>,
    trace: Option<&mut EventTrace>,
) -> Result<EpisodeOutput> {
    let spec = spec_for(cfg, cfg.env(), cfg.policy.update, cfg.policy.offload, model, cfg.seed);
    run_episode(spec, trace)
}

/// Collects traces and turns them into labeled samples.
pub fn collect(cfg: &RunConfig) -> Result<Vec<TrainingSample>> {
    let env = cfg.env();
    let logs = collect_traces(&env, &cfg.collect, cfg.seed)?;
    let mut out = Vec::new();
    for (i, log) in logs.iter().enumerate() {
        let mut e = env;
        e.workload.lambda_in = cfg.collect.lambdas[i / cfg.collect.episodes_per_lambda.max(1)];
        let seed = derive_seed(cfg.seed, (1 << 32) + i as u64);
        out.extend(build_samples(log, &e, &cfg.thresholds, &cfg.collect.replay, seed)?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: LearnedModel,
    pub report: TrainReport,
    pub holdout: HeadAccuracy,
}

/// Trains a fresh model for `encoder` on `data`.
pub fn train_model(
    cfg: &RunConfig,
    encoder: EncoderConfig,
    data: &[TrainingSample],
    on_epoch: impl FnMut(usize, f64),
) -> Result<Trained> {
    let mut init = RngStreams::new(cfg.seed ^ encoder.d_sem as u64).get(Stream::Training);
    let mut model = LearnedModel::new(encoder, &mut init)?;
    let (train_idx, hold_idx) = split_holdout(data.len(), cfg.train.holdout, cfg.seed);
    let report = train(&mut model, data, &train_idx, &cfg.train, &cfg.loss, cfg.seed, on_epoch)?;
    let holdout = evaluate_heads(&model, data, &hold_idx)?;
    Ok(Trained { model, report, holdout })
}

/// One results.csv row: a single (arrival rate, policy, seed) episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub lambda: f64,
    pub policy: String,
    pub offload: String,
    pub d_sem: usize,
    pub seed: u64,
    pub arrivals: u64,
    pub successes: u64,
    pub failures: u64,
    pub fail_overflow: u64,
    pub fail_timeout: u64,
    pub local: u64,
    pub offloaded: u64,
    pub updates: u64,
    pub success_rate: f64,
    pub update_freq: f64,
    pub median_interval: f64,
    pub mean_delay: f64,
    pub c_task: f64,
    pub c_comm: f64,
    pub c_sem: f64,
    pub j: f64,
    pub sn_mean_in_system: f64,
    pub sn_throughput: f64,
    pub sn_mean_sojourn: f64,
}

impl ResultRow {
    pub fn from_metrics(
        lambda: f64,
        update: UpdatePolicy,
        offload: OffloadPolicy,
        d_sem: usize,
        seed: u64,
        m: &Metrics,
        intervals: &[f64],
    ) -> Self {
        Self {
            lambda,
            policy: update.name().into(),
            offload: offload.name().into(),
            d_sem,
            seed,
            arrivals: m.arrivals,
            successes: m.successes,
            failures: m.failures,
            fail_overflow: m.fail_overflow,
            fail_timeout: m.fail_timeout,
            local: m.local,
            offloaded: m.offloaded,
            updates: m.updates,
            success_rate: m.success_rate,
            update_freq: m.update_freq,
            median_interval: median(intervals),
            mean_delay: m.mean_delay,
            c_task: m.c_task,
            c_comm: m.c_comm,
            c_sem: m.c_sem,
            j: m.j,
            sn_mean_in_system: m.sn_mean_in_system,
            sn_throughput: m.sn_throughput,
            sn_mean_sojourn: m.sn_mean_sojourn,
        }
    }

    pub fn key(&self) -> String {
        format!(
            "{}_d{}_lambda{}_seed{}",
            self.policy, self.d_sem, self.lambda, self.seed
        )
    }
}

/// Gaps between consecutive update times.
pub fn intervals(times: &[f64]) -> Vec<f64> {
    times.windows(2).map(|w| w[1] - w[0]).collect()
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Fixed-width histogram with a final overflow bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub key: String,
    pub bin: f64,
    pub max: f64,
    /// `ceil(max / bin)` regular bins, then the overflow bin.
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(key: String, values: &[f64], bin: f64, max: f64) -> Self {
        let n = (max / bin).round() as usize;
        let mut counts = vec![0u64; n + 1];
        for &v in values {
            let i = if v >= max {
                n
            } else {
                ((v / bin).floor() as usize).min(n - 1)
            };
            counts[i] += 1;
        }
        Self { key, bin, max, counts }
    }

    pub fn mass(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn nonempty_bins(&self) -> usize {
        self.counts.iter().filter(|c| **c > 0).count()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["bin_start", "bin_end", "count"])?;
        let n = self.counts.len() - 1;
        for (i, c) in self.counts.iter().enumerate() {
            let start = i as f64 * self.bin;
            let end = if i == n {
                f64::INFINITY
            } else {
                (i + 1) as f64 * self.bin
            };
            let start = if i == n { self.max } else { start };
            w.write_record([start.to_string(), end.to_string(), c.to_string()])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?).expect("utf8"))
    }
}

/// Rows plus histograms of a sweep or ablation; the input of `export`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSet {
    pub rows: Vec<ResultRow>,
    pub histograms: Vec<Histogram>,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    lambda: f64,
    update: UpdatePolicy,
    offload: OffloadPolicy,
    seed: u64,
}

fn run_cells(cfg: &RunConfig, cells: Vec<Cell>, model: Option<&LearnedModel>, d_sem: usize) -> Result<RunSet> {
    let results = par::map(cells, |c| {
        let mut env = cfg.env();
        env.workload.lambda_in = c.lambda;
        let needs = c.update.needs_encoder() || c.offload == OffloadPolicy::Semantic;
        let spec = spec_for(cfg, env, c.update, c.offload, if needs { model } else { None }, c.seed);
        run_episode(spec, None).map(|out| {
            let iv = intervals(&out.update_times);
            let row = ResultRow::from_metrics(c.lambda, c.update, c.offload, d_sem, c.seed, &out.metrics, &iv);
            let hist = Histogram::new(row.key(), &iv, cfg.sweep.hist_bin, cfg.sweep.hist_max);
            (row, hist)
        })
    });
    let mut set = RunSet::default();
    for r in results {
        let (row, hist) = r?;
        set.rows.push(row);
        set.histograms.push(hist);
    }
    Ok(set)
}

fn offload_for(cfg: &RunConfig, update: UpdatePolicy) -> OffloadPolicy {
    if update == UpdatePolicy::Semantic {
        OffloadPolicy::Semantic
    } else {
        cfg.sweep.baseline_offload
    }
}

/// Cross product of arrival rates, policies and seeds.
pub fn sweep(cfg: &RunConfig, model: Option<&LearnedModel>) -> Result<RunSet> {
    let mut cells = Vec::new();
    for &lambda in &cfg.sweep.lambdas {
        for &update in &cfg.sweep.policies {
            for &seed in &cfg.sweep.seeds {
                cells.push(Cell {
                    lambda,
                    update,
                    offload: offload_for(cfg, update),
                    seed,
                });
            }
        }
    }
    let d = model.map_or(cfg.encoder.d_sem, LearnedModel::d_sem);
    run_cells(cfg, cells, model, d)
}

/// Evaluates an already trained model at the ablation arrival rate.
pub fn evaluate_dsem(cfg: &RunConfig, model: &LearnedModel) -> Result<RunSet> {
    let cells = cfg
        .sweep
        .seeds
        .iter()
        .map(|&seed| Cell {
            lambda: cfg.sweep.ablation_lambda,
            update: UpdatePolicy::Semantic,
            offload: OffloadPolicy::Semantic,
            seed,
        })
        .collect();
    run_cells(cfg, cells, Some(model), model.d_sem())
}

/// Retrains per semantic dimension on `data` and evaluates each model.
pub fn ablate(cfg: &RunConfig, data: &[TrainingSample], mut log: impl FnMut(&str)) -> Result<RunSet> {
    let mut set = RunSet::default();
    for &d in &cfg.sweep.ablation_dsem {
        let enc = EncoderConfig {
            d_sem: d,
            ..cfg.encoder
        };
        let t = train_model(cfg, enc, data, |_, _| {})?;
        log(&format!(
            "d_sem={d}: final loss {:.4}, holdout sn recall {:.3}, ap accuracy {:.3}",
            t.report.curve.last().copied().unwrap_or(f64::NAN),
            t.holdout.sn_positive_recall,
            t.holdout.ap_accuracy
        ));
        let r = evaluate_dsem(cfg, &t.model)?;
        set.rows.extend(r.rows);
        set.histograms.extend(r.histograms);
    }
    Ok(set)
}

/// Mean and sample standard deviation over seeds for one (lambda, policy, d_sem) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub lambda: f64,
    pub policy: String,
    pub offload: String,
    pub d_sem: usize,
    pub n_seeds: usize,
    pub success_rate_mean: f64,
    pub success_rate_std: f64,
    pub update_freq_mean: f64,
    pub update_freq_std: f64,
    pub mean_delay_mean: f64,
    pub j_mean: f64,
    pub median_interval_mean: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(u64, String, String, usize), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.lambda.to_bits(), r.policy.clone(), r.offload.clone(), r.d_sem))
            .or_default()
            .push(r);
    }
    let mut out: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((l, policy, offload, d_sem), g)| {
            let col = |f: fn(&ResultRow) -> f64| g.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (sm, ss) = mean_std(&col(|r| r.success_rate));
            let (um, us) = mean_std(&col(|r| r.update_freq));
            SummaryRow {
                lambda: f64::from_bits(l),
                policy,
                offload,
                d_sem,
                n_seeds: g.len(),
                success_rate_mean: sm,
                success_rate_std: ss,
                update_freq_mean: um,
                update_freq_std: us,
                mean_delay_mean: mean_std(&col(|r| r.mean_delay)).0,
                j_mean: mean_std(&col(|r| r.j)).0,
                median_interval_mean: mean_std(&col(|r| r.median_interval)).0,
            }
        })
        .collect();
    out.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then_with(|| a.policy.cmp(&b.policy)));
    out
}

/// Looks up the seed-averaged row for a policy at an arrival rate.
pub fn find_summary<'a>(s: &'a [SummaryRow], lambda: f64, policy: &str) -> Option<&'a SummaryRow> {
    s.iter().find(|r| r.lambda == lambda && r.policy == policy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

/// Structural assertions every exported run set must satisfy.
pub fn structural_checks(cfg: &RunConfig, set: &RunSet) -> Vec<Check> {
    let mut out = Vec::new();
    let conserved = set.rows.iter().all(|r| r.arrivals == r.successes + r.failures);
    out.push(Check::new(
        "task conservation",
        conserved,
        "arrivals == successes + failures in every row".into(),
    ));
    let slot_rate = 1.0 / cfg.slot;
    let bounded = set.rows.iter().all(|r| r.update_freq <= slot_rate + 1e-9);
    out.push(Check::new(
        "update rate bounded by slot rate",
        bounded,
        format!(
            "max {:.3}/s vs {slot_rate}/s",
            set.rows.iter().map(|r| r.update_freq).fold(0.0, f64::max)
        ),
    ));
    let mass = set
        .rows
        .iter()
        .zip(&set.histograms)
        .all(|(r, h)| h.mass() == r.updates.saturating_sub(1) && h.key == r.key());
    out.push(Check::new(
        "histogram mass",
        mass,
        "each histogram holds updates - 1 intervals".into(),
    ));
    let cap = cfg.env().capacity();
    let reference = cfg.ap == ServerConfig::ap() && cfg.sn == ServerConfig::sn() && cfg.workload.mu_c == 1e8;
    out.push(Check::new(
        "service capacity",
        !reference || (cap - 56.0).abs() < 1e-9,
        format!("configured AP+SN capacity {cap:.2} tasks/s"),
    ));
    out
}

/// Build provenance and resolved configuration stored beside the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub commit: String,
    pub command: String,
    pub parallel: bool,
    /// Master seed followed by the sweep seeds.
    pub seeds: Vec<u64>,
    pub config: RunConfig,
    pub files: Vec<String>,
}

pub fn git_commit() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?)
}

/// Writes results.csv, summary.csv, runs.json, manifest.json and one
/// histogram CSV per run into `dir`. Returns the written paths.
pub fn export(dir: &Path, cfg: &RunConfig, set: &RunSet, command: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir.join("hist"))?;
    let mut files = Vec::new();
    let results = dir.join("results.csv");
    write_results_csv(&results, &set.rows)?;
    files.push(results);

    let summary = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary)?;
    for s in summarize(&set.rows) {
        w.serialize(s)?;
    }
    w.flush()?;
    files.push(summary);

    for h in &set.histograms {
        let p = dir.join("hist").join(format!("{}.csv", h.key));
        fs::write(&p, h.to_csv()?)?;
        files.push(p);
    }

    let runs = dir.join("runs.json");
    fs::write(&runs, serde_json::to_string(set)?)?;
    files.push(runs);

    let mut seeds = cfg.sweep.seeds.clone();
    seeds.insert(0, cfg.seed);
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        commit: git_commit(),
        command: command.into(),
        parallel: par::is_parallel(),
        seeds,
        config: cfg.clone(),
        files: files
            .iter()
            .map(|p| p.strip_prefix(dir).unwrap_or(p).display().to_string())
            .collect(),
    };
    let mpath = dir.join("manifest.json");
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?)?;
    files.push(mpath);
    Ok(files)
}

/// Re-renders every export file from a saved `runs.json`.
pub fn export_from(runs_json: &Path, dir: &Path, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let set: RunSet = serde_json::from_str(&fs::read_to_string(runs_json)?)?;
    export(dir, cfg, &set, "export")
}

//! Offline centralized training: trace collection under an exploring expert,
//! label generation, the joint loss with its exact gradient, and minibatch
//! training of the encoder and both heads.
//!
//! SN labels come from a virtual replay of each trace. Collection runs with an
//! SN that updates every slot, so the trace shows the true SN state at every
//! slot; the replay then walks the slots with a virtual AP cache, labels each
//! slot with the update rule evaluated on that cache's AoI, and refreshes the
//! cache mostly, though not always, when the label says so. Training inputs
//! are built from that replayed cache, which keeps them consistent with what
//! the learned policies see when deployed.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use semsync_nn::{bce_with_logit, Adam, AdamConfig, ModelParams, Tensor2};
use serde::{Deserialize, Serialize};

use crate::model::{Architecture, LearnedModel};
use crate::node::RawState;
use crate::par;
use crate::policies::{OffloadPolicy, UpdatePolicy};
use crate::semantics::{sdi, sdi_grad, smoothness, smoothness_grad, SDI_EPS};
use crate::sim::{RngStreams, Stream};
use crate::system::{run_episode, EnvConfig, EpisodeLog, EpisodeSpec, PolicyParams, TaskRecord};
use crate::workload::{Decision, Outcome};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationThresholds {
    /// Maximum tolerated AoI, seconds.
    pub tau_max: f64,
    /// SN occupancy that triggers an update.
    pub delta_warn: f64,
    /// SN occupancy that forces local execution.
    pub delta_cong: f64,
    /// Latency margin, seconds, by which offloading must lose before going local.
    pub eps_hyst: f64,
}

impl Default for CalibrationThresholds {
    fn default() -> Self {
        Self {
            tau_max: 0.5,
            delta_warn: 0.5,
            delta_cong: 0.5,
            eps_hyst: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_ap: f64,
    pub lambda_sem: f64,
    pub lambda_inf: f64,
    pub lambda_c: f64,
    pub lambda_f: f64,
    pub lambda_lat: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_r: 1.0,
            lambda_ap: 1.2,
            lambda_sem: 0.1,
            lambda_inf: 1.0,
            lambda_c: 0.1,
            lambda_f: 0.5,
            lambda_lat: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_r,
            self.lambda_ap,
            self.lambda_sem,
            self.lambda_inf,
            self.lambda_c,
            self.lambda_f,
            self.lambda_lat,
        ];
        if all.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Update label: stale status or a filling SN queue. Both bounds inclusive.
pub fn label_sn(aoi: f64, occupancy: f64, thr: &CalibrationThresholds) -> bool {
    aoi >= thr.tau_max || occupancy >= thr.delta_warn
}

/// Inputs of the offloading label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApLabelInput {
    /// Unperturbed expert action, when the record has one.
    pub expert: Option<Decision>,
    pub occupancy: f64,
    pub t_loc_est: f64,
    pub t_off_est: f64,
}

/// Clone the expert where it acted; otherwise go local when the SN is
/// congested or remote execution is estimated slower by the margin.
pub fn label_ap(r: &ApLabelInput, thr: &CalibrationThresholds) -> Decision {
    if let Some(a) = r.expert {
        return a;
    }
    if r.occupancy >= thr.delta_cong || r.t_off_est - r.t_loc_est >= thr.eps_hyst {
        Decision::Local
    } else {
        Decision::Offload
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectConfig {
    /// One block of episodes per arrival rate.
    pub lambdas: Vec<f64>,
    pub episodes_per_lambda: usize,
    pub episode_len: f64,
    pub explore_eps: f64,
    pub replay: ReplayBehavior,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![10.0, 20.0, 30.0, 40.0, 50.0, 55.0, 60.0],
            episodes_per_lambda: 1,
            episode_len: 120.0,
            explore_eps: 0.1,
            replay: ReplayBehavior::default(),
        }
    }
}

/// Episode seed for block `i`, decorrelated from the master seed.
pub fn derive_seed(master: u64, i: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = master ^ i.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs the exploring expert with an every-slot SN and keeps the logs.
pub fn collect_traces(env: &EnvConfig, cfg: &CollectConfig, seed: u64) -> Result<Vec<EpisodeLog>> {
    let mut jobs = Vec::new();
    for (li, &lambda) in cfg.lambdas.iter().enumerate() {
        for e in 0..cfg.episodes_per_lambda {
            let mut env = *env;
            env.workload.lambda_in = lambda;
            env.workload.episode_len = cfg.episode_len;
            jobs.push((env, derive_seed(seed, (li * cfg.episodes_per_lambda + e) as u64)));
        }
    }
    let eps = cfg.explore_eps;
    par::map(jobs, |(env, s)| {
        let mut spec = EpisodeSpec::new(env, UpdatePolicy::Always, OffloadPolicy::Expert, s);
        spec.params = PolicyParams {
            explore_eps: eps,
            ..PolicyParams::default()
        };
        spec.record = true;
        run_episode(spec, None).map(|o| o.log.expect("recording enabled"))
    })
    .into_iter()
    .collect()
}

/// One supervised example, all features already normalised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    /// SN state at the decision slot, AoI from the replayed cache.
    pub x_t: [f64; 6],
    /// SN state one slot earlier.
    pub x_prev: [f64; 6],
    pub has_prev: bool,
    /// State the SN last sent before this slot.
    pub x_hat: [f64; 6],
    /// The replay sent an update at this slot, so the AP holds `x_t`.
    pub updated: bool,
    pub qos: f64,
    pub aoi_norm: f64,
    pub d_down_norm: f64,
    pub ap_idle: f64,
    pub ap_qlen_norm: f64,
    pub ap_residual_norm: f64,
    pub y_sn: bool,
    /// True for Local.
    pub y_ap: bool,
    pub y_success: bool,
    pub action_local: bool,
    pub from_expert: bool,
    /// Local and remote latency in seconds; the taken branch is realized.
    pub t_loc: f64,
    pub t_off: f64,
    pub t_actual: f64,
    pub tau: f64,
}

impl TrainingSample {
    /// CSV header, in column order.
    pub fn header() -> Vec<String> {
        let mut h = Vec::new();
        for (p, n) in [("x_t", 6), ("x_prev", 6), ("x_hat", 6)] {
            h.extend((0..n).map(|i| format!("{p}{}", i + 1)));
        }
        h.extend(
            [
                "has_prev",
                "updated",
                "qos",
                "aoi_norm",
                "d_down_norm",
                "ap_idle",
                "ap_qlen_norm",
                "ap_residual_norm",
                "y_sn",
                "y_ap",
                "y_success",
                "action_local",
                "from_expert",
                "t_loc",
                "t_off",
                "t_actual",
                "tau",
            ]
            .map(String::from),
        );
        h
    }

    fn to_row(self) -> Vec<f64> {
        let b = |v: bool| if v { 1.0 } else { 0.0 };
        let mut r = Vec::with_capacity(35);
        r.extend(self.x_t);
        r.extend(self.x_prev);
        r.extend(self.x_hat);
        r.extend([
            b(self.has_prev),
            b(self.updated),
            self.qos,
            self.aoi_norm,
            self.d_down_norm,
            self.ap_idle,
            self.ap_qlen_norm,
            self.ap_residual_norm,
            b(self.y_sn),
            b(self.y_ap),
            b(self.y_success),
            b(self.action_local),
            b(self.from_expert),
            self.t_loc,
            self.t_off,
            self.t_actual,
            self.tau,
        ]);
        r
    }

    fn from_row(r: &[f64]) -> Result<Self> {
        if r.len() != 35 {
            return Err(Error::Dataset(format!("expected 35 columns, got {}", r.len())));
        }
        let arr = |o: usize| -> [f64; 6] { r[o..o + 6].try_into().expect("six") };
        let b = |v: f64| -> Result<bool> {
            match v {
                0.0 => Ok(false),
                1.0 => Ok(true),
                _ => Err(Error::Dataset(format!("flag column holds {v}"))),
            }
        };
        Ok(Self {
            x_t: arr(0),
            x_prev: arr(6),
            x_hat: arr(12),
            has_prev: b(r[18])?,
            updated: b(r[19])?,
            qos: r[20],
            aoi_norm: r[21],
            d_down_norm: r[22],
            ap_idle: r[23],
            ap_qlen_norm: r[24],
            ap_residual_norm: r[25],
            y_sn: b(r[26])?,
            y_ap: b(r[27])?,
            y_success: b(r[28])?,
            action_local: b(r[29])?,
            from_expert: b(r[30])?,
            t_loc: r[31],
            t_off: r[32],
            t_actual: r[33],
            tau: r[34],
        })
    }

    /// Training-sample invariants: the realized branch matches the action
    /// and latencies are finite and nonnegative.
    pub fn check(&self) -> Result<()> {
        let realized = if self.action_local { self.t_loc } else { self.t_off };
        let ok = realized == self.t_actual
            && [self.t_loc, self.t_off, self.t_actual, self.tau]
                .iter()
                .all(|v| v.is_finite() && *v >= 0.0)
            && self.to_row().iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Dataset(format!("inconsistent sample {self:?}")))
        }
    }
}

pub fn write_dataset<W: Write>(w: W, data: &[TrainingSample]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TrainingSample::header())?;
    for s in data {
        // shortest round-trip formatting keeps every value bit-exact
        out.write_record(s.to_row().iter().map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(r: R) -> Result<Vec<TrainingSample>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header != TrainingSample::header() {
        return Err(Error::Dataset(
            "dataset header does not match the expected columns".into(),
        ));
    }
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|c| c.parse::<f64>().map_err(|e| Error::Dataset(format!("`{c}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            TrainingSample::from_row(&row)
        })
        .collect()
}

/// Per-slot view of the label replay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplaySlot {
    pub aoi: f64,
    pub y_sn: bool,
    /// Whether the replayed cache was refreshed at this slot.
    pub updated: bool,
    /// State with the replayed AoI.
    pub x: RawState,
    /// Cached state before and after this slot's decision.
    pub hat_before: RawState,
    pub hat_after: RawState,
    /// Generation time of the cached state after the decision.
    pub gen_after: f64,
}

/// How the replayed cache departs from the label schedule.
///
/// Following the labels exactly means a congested SN is refreshed every slot,
/// so the AoI feature alone gives the label away and a deployed policy that
/// skips once never sees such a state again. Skips and spurious refreshes put
/// stale congested states and fresh idle ones into the data, while the labels
/// themselves stay the pure rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayBehavior {
    /// Probability of withholding a labeled update.
    pub skip: f64,
    /// Per-slot probability of an unlabeled update.
    pub extra: f64,
}

impl ReplayBehavior {
    /// Cache follows the labels exactly.
    pub const EXACT: Self = Self { skip: 0.0, extra: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.skip) || !(0.0..=1.0).contains(&self.extra) {
            return Err(Error::Config(format!("replay probabilities out of range: {self:?}")));
        }
        Ok(())
    }
}

impl Default for ReplayBehavior {
    fn default() -> Self {
        Self { skip: 0.9, extra: 0.01 }
    }
}

/// Replays the update label over a log's slots. Slot 0 is the bootstrap.
pub fn replay_labels<R: Rng + ?Sized>(
    log: &EpisodeLog,
    thr: &CalibrationThresholds,
    behavior: &ReplayBehavior,
    rng: &mut R,
) -> Vec<ReplaySlot> {
    let mut out = Vec::with_capacity(log.slots.len());
    let Some(first) = log.slots.first() else {
        return out;
    };
    let mut x0 = first.x;
    x0.aoi = 0.0;
    let mut cache = x0;
    let mut gen = first.t;
    out.push(ReplaySlot {
        aoi: 0.0,
        y_sn: false,
        updated: false,
        x: x0,
        hat_before: x0,
        hat_after: x0,
        gen_after: gen,
    });
    for s in &log.slots[1..] {
        let aoi = s.t - gen;
        let mut x = s.x;
        x.aoi = aoi;
        let y = label_sn(aoi, s.occupancy, thr);
        // both draws happen every slot so the stream does not depend on labels
        let (u_skip, u_extra) = (rng.random::<f64>(), rng.random::<f64>());
        let updated = if y {
            u_skip >= behavior.skip
        } else {
            u_extra < behavior.extra
        };
        let before = cache;
        if updated {
            cache = x;
            gen = s.t;
        }
        out.push(ReplaySlot {
            aoi,
            y_sn: y,
            updated,
            x,
            hat_before: before,
            hat_after: cache,
            gen_after: gen,
        });
    }
    out
}

/// Builds one training sample per task record.
pub fn build_samples(
    log: &EpisodeLog,
    env: &EnvConfig,
    thr: &CalibrationThresholds,
    behavior: &ReplayBehavior,
    seed: u64,
) -> Result<Vec<TrainingSample>> {
    behavior.validate()?;
    let norm = env.normalizer();
    let mut rng = RngStreams::new(seed).get(Stream::Exploration);
    let replay = replay_labels(log, thr, behavior, &mut rng);
    let deadline = env.workload.deadline;
    let qos = (env.link.status_tx_time() + env.link.d_prop_mean) / deadline;
    log.tasks
        .iter()
        .map(|r| {
            let k = r.slot;
            let slot = replay
                .get(k)
                .ok_or_else(|| Error::Dataset(format!("task {} points at missing slot {k}", r.id)))?;
            let occupancy = log.slots[k].occupancy;
            let y_ap = label_ap(&ap_label_input(r, occupancy), thr) == Decision::Local;
            let action_local = r.action == Decision::Local;
            if r.outcome == Outcome::Pending || !r.t_actual.is_finite() {
                return Err(Error::Dataset(format!("task {} has no outcome", r.id)));
            }
            let (t_loc, t_off) = if action_local {
                (r.t_actual, r.t_off_est)
            } else {
                (r.t_loc_est, r.t_actual)
            };
            let s = TrainingSample {
                x_t: norm.normalize(&slot.x),
                x_prev: if k >= 1 {
                    norm.normalize(&replay[k - 1].x)
                } else {
                    [0.0; 6]
                },
                has_prev: k >= 1,
                x_hat: norm.normalize(&slot.hat_before),
                updated: slot.updated,
                qos,
                aoi_norm: (r.t - slot.gen_after) / deadline,
                d_down_norm: r.d_down_est / deadline,
                ap_idle: r.ap_idle,
                ap_qlen_norm: r.ap_qlen_norm,
                ap_residual_norm: r.ap_residual / deadline,
                y_sn: slot.y_sn,
                y_ap,
                y_success: r.outcome == Outcome::Success,
                action_local,
                from_expert: r.from_expert,
                t_loc,
                t_off,
                t_actual: r.t_actual,
                tau: deadline,
            };
            s.check()?;
            Ok(s)
        })
        .collect()
}

pub fn ap_label_input(r: &TaskRecord, occupancy: f64) -> ApLabelInput {
    ApLabelInput {
        expert: r.from_expert.then_some(r.expert),
        occupancy,
        t_loc_est: r.t_loc_est,
        t_off_est: r.t_off_est,
    }
}

/// Weighted terms of the joint loss, already multiplied by their lambdas.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub imit_sn: f64,
    pub imit_ap: f64,
    pub inference: f64,
    pub comm: f64,
    pub forward_time: f64,
    pub latency: f64,
    pub consistency: f64,
    pub total: f64,
}

/// Epsilon in the latency penalty denominator.
pub const LAT_EPS: f64 = 1e-8;

/// Joint imitation, system and consistency loss over `batch`; accumulates
/// parameter gradients when `with_grad`.
///
/// The success-inference term scores the probability the AP head assigns to
/// the action actually taken against whether the task succeeded.
#[allow(clippy::too_many_arguments)]
pub fn joint_loss<R: Rng + ?Sized>(
    arch: &Architecture,
    params: &mut ModelParams,
    batch: &[&TrainingSample],
    w: &LossWeights,
    train: bool,
    rng: &mut R,
    with_grad: bool,
) -> Result<LossParts> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let d = arch.encoder.cfg.d_sem;
    let mut x = Tensor2::zeros((3 * n, 6));
    for (i, s) in batch.iter().enumerate() {
        for j in 0..6 {
            x[[i, j]] = s.x_t[j];
            x[[n + i, j]] = s.x_prev[j];
            x[[2 * n + i, j]] = s.x_hat[j];
        }
    }
    let (z, enc_cache) = arch.encoder.forward(params, &x, train, rng)?;
    let row = |r: usize| z.row(r).to_vec();

    let mut sn_in = Tensor2::zeros((n, d + 2));
    let mut ap_in = Tensor2::zeros((n, d + 5));
    let mut sdis = Vec::with_capacity(n);
    for (i, s) in batch.iter().enumerate() {
        let zt = row(i);
        let zh = row(2 * n + i);
        let v = sdi(&zt, &zh, SDI_EPS);
        sdis.push(v);
        for j in 0..d {
            sn_in[[i, j]] = zt[j];
            ap_in[[i, j]] = if s.updated { zt[j] } else { zh[j] };
        }
        sn_in[[i, d]] = v;
        sn_in[[i, d + 1]] = s.qos;
        for (j, v) in [s.aoi_norm, s.d_down_norm, s.ap_idle, s.ap_qlen_norm, s.ap_residual_norm]
            .into_iter()
            .enumerate()
        {
            ap_in[[i, d + j]] = v;
        }
    }
    let (l_sn, sn_cache) = arch.sn_head.logits(params, &sn_in)?;
    let (l_ap, ap_cache) = arch.ap_head.logits(params, &ap_in)?;

    let inv_n = 1.0 / n as f64;
    let n_prev = batch.iter().filter(|s| s.has_prev).count();
    let mut parts = LossParts::default();
    let mut d_sn = Tensor2::zeros((n, 1));
    let mut d_ap = Tensor2::zeros((n, 1));
    for (i, s) in batch.iter().enumerate() {
        let (ls, la) = (l_sn[[i, 0]], l_ap[[i, 0]]);
        let p_up = sigmoid1(ls);
        let p_loc = sigmoid1(la);
        let (bce_sn, g_sn) = bce_with_logit(ls, f64::from(u8::from(s.y_sn)));
        let (bce_ap, g_ap) = bce_with_logit(la, f64::from(u8::from(s.y_ap)));
        // logit of the taken action
        let sign = if s.action_local { 1.0 } else { -1.0 };
        let (bce_inf, g_inf) = bce_with_logit(sign * la, f64::from(u8::from(s.y_success)));
        let (tl, to) = (s.t_loc / s.tau, s.t_off / s.tau);
        let fwd = p_loc * tl + (1.0 - p_loc) * to;
        let lat = (s.t_actual - s.tau).max(0.0) / (s.tau + LAT_EPS);

        parts.imit_sn += w.lambda_r * bce_sn * inv_n;
        parts.imit_ap += w.lambda_ap * bce_ap * inv_n;
        parts.inference += w.lambda_inf * bce_inf * inv_n;
        parts.comm += w.lambda_c * p_up * inv_n;
        parts.forward_time += w.lambda_f * fwd * inv_n;
        parts.latency += w.lambda_lat * lat * inv_n;

        d_sn[[i, 0]] = inv_n * (w.lambda_r * g_sn + w.lambda_c * p_up * (1.0 - p_up));
        d_ap[[i, 0]] =
            inv_n * (w.lambda_ap * g_ap + w.lambda_inf * sign * g_inf + w.lambda_f * (tl - to) * p_loc * (1.0 - p_loc));
    }
    let mut dz = Tensor2::zeros(z.raw_dim());
    if n_prev > 0 {
        let scale = w.lambda_sem / n_prev as f64;
        for (i, _) in batch.iter().enumerate().filter(|(_, s)| s.has_prev) {
            let (zt, zp) = (row(i), row(n + i));
            parts.consistency += scale * smoothness(&zt, &zp);
            for (j, g) in smoothness_grad(&zt, &zp).into_iter().enumerate() {
                dz[[i, j]] += scale * g;
                dz[[n + i, j]] -= scale * g;
            }
        }
    }
    parts.total = parts.imit_sn
        + parts.imit_ap
        + parts.inference
        + parts.comm
        + parts.forward_time
        + parts.latency
        + parts.consistency;
    if !with_grad {
        return Ok(parts);
    }

    let d_sn_in = arch.sn_head.mlp.backward(params, &sn_cache, &d_sn);
    let d_ap_in = arch.ap_head.mlp.backward(params, &ap_cache, &d_ap);
    for (i, s) in batch.iter().enumerate() {
        let zt = row(i);
        let zh = row(2 * n + i);
        let dsdi = d_sn_in[[i, d]];
        let (gz, gzh) = sdi_grad(&zt, &zh, SDI_EPS);
        let hat_row = if s.updated { i } else { 2 * n + i };
        for j in 0..d {
            dz[[i, j]] += d_sn_in[[i, j]] + dsdi * gz[j];
            dz[[2 * n + i, j]] += dsdi * gzh[j];
            dz[[hat_row, j]] += d_ap_in[[i, j]];
        }
    }
    arch.encoder.backward(params, &enc_cache, &dz);
    Ok(parts)
}

fn sigmoid1(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Fraction of samples held out for accuracy checks.
    pub holdout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch: 256,
            lr: 1e-3,
            weight_decay: 1e-4,
            holdout: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub curve: Vec<f64>,
    pub first_parts: LossParts,
    pub last_parts: LossParts,
    pub train_size: usize,
    pub holdout_size: usize,
}

/// Deterministic split: holdout indices come from the training stream.
pub fn split_holdout(n: usize, frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = RngStreams::new(derive_seed(seed, u64::MAX)).get(Stream::Training);
    idx.shuffle(&mut rng);
    let k = ((n as f64) * frac).round() as usize;
    let hold = idx[..k].to_vec();
    let train = idx[k..].to_vec();
    (train, hold)
}

/// Minibatch Adam over `train_idx`. A set smaller than one batch is used
/// whole at every step.
pub fn train(
    model: &mut LearnedModel,
    data: &[TrainingSample],
    train_idx: &[usize],
    cfg: &TrainConfig,
    w: &LossWeights,
    seed: u64,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    w.validate()?;
    if train_idx.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    });
    let mut rng = RngStreams::new(seed).get(Stream::Training);
    let mut order = train_idx.to_vec();
    let batch = cfg.batch.max(1);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut first_parts = LossParts::default();
    let mut last_parts = LossParts::default();
    let LearnedModel { params, arch } = model;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossParts::default();
        let mut count = 0usize;
        for chunk in order.chunks(batch) {
            let b: Vec<&TrainingSample> = chunk.iter().map(|&i| &data[i]).collect();
            let p = joint_loss(arch, params, &b, w, true, &mut rng, true)?;
            adam.step(params);
            let k = chunk.len() as f64;
            accumulate(&mut sum, &p, k);
            count += chunk.len();
        }
        scale_parts(&mut sum, 1.0 / count as f64);
        if epoch == 0 {
            first_parts = sum;
        }
        last_parts = sum;
        curve.push(sum.total);
        on_epoch(epoch, sum.total);
    }
    Ok(TrainReport {
        curve,
        first_parts,
        last_parts,
        train_size: train_idx.len(),
        holdout_size: data.len() - train_idx.len(),
    })
}

fn accumulate(acc: &mut LossParts, p: &LossParts, k: f64) {
    acc.imit_sn += p.imit_sn * k;
    acc.imit_ap += p.imit_ap * k;
    acc.inference += p.inference * k;
    acc.comm += p.comm * k;
    acc.forward_time += p.forward_time * k;
    acc.latency += p.latency * k;
    acc.consistency += p.consistency * k;
    acc.total += p.total * k;
}

fn scale_parts(p: &mut LossParts, s: f64) {
    for v in [
        &mut p.imit_sn,
        &mut p.imit_ap,
        &mut p.inference,
        &mut p.comm,
        &mut p.forward_time,
        &mut p.latency,
        &mut p.consistency,
        &mut p.total,
    ] {
        *v *= s;
    }
}

/// Held-out agreement of both heads with their labels, in eval mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadAccuracy {
    pub sn_positive_recall: f64,
    pub sn_accuracy: f64,
    pub ap_accuracy: f64,
    pub samples: usize,
}

pub fn evaluate_heads(model: &LearnedModel, data: &[TrainingSample], idx: &[usize]) -> Result<HeadAccuracy> {
    let arch = &model.arch;
    let params = &model.params;
    let d = model.d_sem();
    let (mut pos, mut pos_hit, mut sn_hit, mut ap_hit) = (0usize, 0usize, 0usize, 0usize);
    for chunk in idx.chunks(1024) {
        let n = chunk.len();
        let mut x = Tensor2::zeros((2 * n, 6));
        for (i, &k) in chunk.iter().enumerate() {
            for j in 0..6 {
                x[[i, j]] = data[k].x_t[j];
                x[[n + i, j]] = data[k].x_hat[j];
            }
        }
        let z = arch.encoder.encode_batch(params, &x)?;
        let mut sn_in = Tensor2::zeros((n, d + 2));
        let mut ap_in = Tensor2::zeros((n, d + 5));
        for (i, &k) in chunk.iter().enumerate() {
            let s = &data[k];
            let zt = z.row(i).to_vec();
            let zh = z.row(n + i).to_vec();
            for j in 0..d {
                sn_in[[i, j]] = zt[j];
                ap_in[[i, j]] = if s.updated { zt[j] } else { zh[j] };
            }
            sn_in[[i, d]] = sdi(&zt, &zh, SDI_EPS);
            sn_in[[i, d + 1]] = s.qos;
            for (j, v) in [s.aoi_norm, s.d_down_norm, s.ap_idle, s.ap_qlen_norm, s.ap_residual_norm]
                .into_iter()
                .enumerate()
            {
                ap_in[[i, d + j]] = v;
            }
        }
        let p_up = arch.sn_head.probs(params, &sn_in)?;
        let p_loc = arch.ap_head.probs(params, &ap_in)?;
        for (i, &k) in chunk.iter().enumerate() {
            let s = &data[k];
            let up = p_up[[i, 0]] > 0.5;
            let loc = p_loc[[i, 0]] > 0.5;
            if s.y_sn {
                pos += 1;
                pos_hit += usize::from(up);
            }
            sn_hit += usize::from(up == s.y_sn);
            ap_hit += usize::from(loc == s.y_ap);
        }
    }
    let n = idx.len().max(1) as f64;
    Ok(HeadAccuracy {
        sn_positive_recall: if pos == 0 { 1.0 } else { pos_hit as f64 / pos as f64 },
        sn_accuracy: sn_hit as f64 / n,
        ap_accuracy: ap_hit as f64 / n,
        samples: idx.len(),
    })
}

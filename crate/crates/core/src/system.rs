//! One closed-loop episode: Poisson tasks arrive at the AP, which runs them
//! locally or ships them to the SN; meanwhile the SN decides every slot
//! whether to push a status update to the AP.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::link::{downlink_delay, uplink_delay, AoiTracker, LinkConfig, StatusPacket};
use crate::model::LearnedModel;
use crate::node::{update_arrival_estimate, Dispatch, Job, RawState, Server, ServerConfig, Submit};
use crate::policies::{
    above_half, cached_sn_wait, expert_estimates, expert_offload, ApInput, ExpertView, FixedPolicy, OffloadPolicy,
    QaoiBucket, SnInput, UpdatePolicy,
};
use crate::semantics::{sdi, smoothness, FeatureNormalizer, SDI_EPS};
use crate::sim::{run_until, EpisodeStats, Event, EventKind, EventTrace, Process, RngStreams, Scheduler, Stream};
use crate::workload::{next_interarrival, sample_task, Decision, Outcome, Task, WorkloadConfig};
use crate::{Error, Result};

/// Physical system configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub workload: WorkloadConfig,
    pub ap: ServerConfig,
    pub sn: ServerConfig,
    pub link: LinkConfig,
    /// Decision slot length at the SN, seconds.
    pub slot: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            workload: WorkloadConfig::default(),
            ap: ServerConfig::ap(),
            sn: ServerConfig::sn(),
            link: LinkConfig::default(),
            slot: 0.01,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.workload.validate()?;
        self.ap.validate()?;
        self.sn.validate()?;
        self.link.validate()?;
        if !(self.slot > 0.0 && self.slot <= self.workload.episode_len) {
            return Err(Error::Config(
                "slot must be positive and no longer than the episode".into(),
            ));
        }
        Ok(())
    }

    pub fn n_slots(&self) -> u64 {
        (self.workload.episode_len / self.slot).round() as u64
    }

    /// Combined AP and SN service rate in tasks per second.
    pub fn capacity(&self) -> f64 {
        self.ap.capacity(self.workload.mu_c) + self.sn.capacity(self.workload.mu_c)
    }

    pub fn normalizer(&self) -> FeatureNormalizer {
        FeatureNormalizer::new(self.sn.n_cores, self.workload.deadline)
    }
}

/// Knobs of the rule-based policies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyParams {
    pub fixed_period: f64,
    pub qaoi_rate: f64,
    pub qaoi_capacity: f64,
    pub sdi_threshold: f64,
    /// Fraction of AP decisions flipped at random.
    pub explore_eps: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            fixed_period: 0.05,
            qaoi_rate: 50.0,
            qaoi_capacity: 50.0,
            sdi_threshold: 0.2,
            explore_eps: 0.0,
        }
    }
}

/// Weights of the reported system cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub p_fail: f64,
    pub omega_up: f64,
    pub omega_down: f64,
    pub lambda_comm: f64,
    pub lambda_sem: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            p_fail: 5.0,
            omega_up: 0.01,
            omega_down: 0.05,
            lambda_comm: 1.0,
            lambda_sem: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub arrivals: u64,
    pub successes: u64,
    pub failures: u64,
    pub fail_overflow: u64,
    pub fail_timeout: u64,
    pub local: u64,
    pub offloaded: u64,
    /// Status updates, excluding the bootstrap status.
    pub updates: u64,
    pub success_rate: f64,
    /// Updates per second of configured episode time.
    pub update_freq: f64,
    /// Mean completion delay of successful tasks.
    pub mean_delay: f64,
    pub c_task: f64,
    pub c_comm: f64,
    pub c_sem: f64,
    /// Per-slot system cost.
    pub j: f64,
    /// Number of tasks at the SN, averaged over slot samples.
    pub sn_mean_in_system: f64,
    /// Tasks admitted to the SN per second of episode time.
    pub sn_throughput: f64,
    /// Mean time admitted SN tasks spent there.
    pub sn_mean_sojourn: f64,
    /// Clock at the end of the drain phase.
    pub end_time: f64,
}

/// Raw state observed at one slot; slot 0 is the bootstrap state at t = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub t: f64,
    pub x: RawState,
    /// SN queue length over its capacity.
    pub occupancy: f64,
}

/// Everything known about one task, for building training samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: usize,
    pub t: f64,
    /// Index of the latest slot record at arrival.
    pub slot: usize,
    pub c_k: f64,
    pub d_k: f64,
    pub ap_idle: f64,
    pub ap_qlen_norm: f64,
    pub ap_residual: f64,
    pub d_down_est: f64,
    pub t_loc_est: f64,
    pub t_off_est: f64,
    pub expert: Decision,
    pub action: Decision,
    /// The action is the unperturbed expert choice.
    pub from_expert: bool,
    pub outcome: Outcome,
    /// Realized latency, or the projected one for failed tasks.
    pub t_actual: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub slots: Vec<SlotRecord>,
    pub tasks: Vec<TaskRecord>,
}

/// What to run.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeSpec<'a> {
    pub env: EnvConfig,
    pub update: UpdatePolicy,
    pub offload: OffloadPolicy,
    pub params: PolicyParams,
    pub cost: CostConfig,
    pub model: Option<&'a LearnedModel>,
    pub seed: u64,
    /// Keep the per-slot and per-task log.
    pub record: bool,
    /// Check server and task-conservation invariants after every event.
    pub strict: bool,
}

impl<'a> EpisodeSpec<'a> {
    pub fn new(env: EnvConfig, update: UpdatePolicy, offload: OffloadPolicy, seed: u64) -> Self {
        Self {
            env,
            update,
            offload,
            params: PolicyParams::default(),
            cost: CostConfig::default(),
            model: None,
            seed,
            record: false,
            strict: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub metrics: Metrics,
    pub stats: EpisodeStats,
    /// Generation times of every counted update.
    pub update_times: Vec<f64>,
    pub log: Option<EpisodeLog>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payload {
    Task(usize),
    Core { sn: bool, core: usize },
    Packet(usize),
    Slot(u64),
}

struct Episode<'a> {
    spec: EpisodeSpec<'a>,
    norm: FeatureNormalizer,
    rng_arrivals: ChaCha8Rng,
    rng_work: ChaCha8Rng,
    rng_link: ChaCha8Rng,
    rng_explore: ChaCha8Rng,
    ap: Server,
    sn: Server,
    tasks: Vec<Task>,
    sn_enter: Vec<Option<f64>>,
    aoi: AoiTracker,
    in_flight: Vec<Option<StatusPacket>>,
    /// AP's cached status.
    cache: StatusPacket,
    /// SN's record of what it last sent.
    last_sent: StatusPacket,
    arrival_est: f64,
    last_arrival: f64,
    last_c_norm: f64,
    b_up_est: f64,
    fixed: FixedPolicy,
    bucket: QaoiBucket,
    prev_z: Option<Vec<f64>>,
    c_sem: f64,
    events: u64,
    in_system: u64,
    successes: u64,
    fail_overflow: u64,
    fail_timeout: u64,
    local: u64,
    offloaded: u64,
    delay_sum: f64,
    sn_count_sum: f64,
    /// Time spent at the SN by tasks rejected when they reached the queue head.
    sn_expired_sojourn: f64,
    slots_seen: u64,
    update_times: Vec<f64>,
    log: Option<EpisodeLog>,
    n_slots: u64,
}

const B_UP_EWMA: f64 = 0.1;

impl<'a> Episode<'a> {
    fn new(spec: EpisodeSpec<'a>) -> Result<Self> {
        spec.env.validate()?;
        let needs_model = spec.update.needs_encoder() || spec.offload == OffloadPolicy::Semantic;
        if needs_model && spec.model.is_none() {
            return Err(Error::MissingParams(format!(
                "{}/{} policies need trained parameters",
                spec.update.name(),
                spec.offload.name()
            )));
        }
        let streams = RngStreams::new(spec.seed);
        let env = spec.env;
        let sn = Server::new(env.sn);
        let x0 = sn.raw_state(0.0, 0.0, 0.0, 0.0);
        let norm = env.normalizer();
        let mut ep = Self {
            spec,
            norm,
            rng_arrivals: streams.get(Stream::Arrivals),
            rng_work: streams.get(Stream::Workloads),
            rng_link: streams.get(Stream::LinkJitter),
            rng_explore: streams.get(Stream::Exploration),
            ap: Server::new(env.ap),
            sn,
            tasks: Vec::new(),
            sn_enter: Vec::new(),
            aoi: AoiTracker::new(0.0),
            in_flight: Vec::new(),
            cache: StatusPacket {
                gen_time: 0.0,
                z: Vec::new(),
                x_raw: x0,
                seq: u64::MAX,
            },
            last_sent: StatusPacket {
                gen_time: 0.0,
                z: Vec::new(),
                x_raw: x0,
                seq: u64::MAX,
            },
            arrival_est: 0.0,
            last_arrival: 0.0,
            last_c_norm: 0.0,
            b_up_est: env.link.b_up,
            fixed: FixedPolicy::new(spec.params.fixed_period),
            bucket: QaoiBucket::new(spec.params.qaoi_rate, spec.params.qaoi_capacity),
            prev_z: None,
            c_sem: 0.0,
            events: 0,
            in_system: 0,
            successes: 0,
            fail_overflow: 0,
            fail_timeout: 0,
            local: 0,
            offloaded: 0,
            delay_sum: 0.0,
            sn_count_sum: 0.0,
            sn_expired_sojourn: 0.0,
            slots_seen: 0,
            update_times: Vec::new(),
            log: spec.record.then(EpisodeLog::default),
            n_slots: env.n_slots(),
        };
        // bootstrap status generated and delivered at t = 0
        let z0 = ep.encode(&x0)?;
        ep.cache.z = z0.clone();
        ep.last_sent.z = z0.clone();
        if !z0.is_empty() {
            ep.prev_z = Some(z0);
        }
        if let Some(log) = &mut ep.log {
            log.slots.push(SlotRecord {
                t: 0.0,
                x: x0,
                occupancy: 0.0,
            });
        }
        Ok(ep)
    }

    fn uses_encoder(&self) -> bool {
        self.spec.update.needs_encoder() || self.spec.offload == OffloadPolicy::Semantic
    }

    fn encode(&self, x: &RawState) -> Result<Vec<f64>> {
        match (self.uses_encoder(), self.spec.model) {
            (true, Some(m)) => m.encode(&self.norm.row(x)),
            _ => Ok(Vec::new()),
        }
    }

    fn deadline(&self) -> f64 {
        self.spec.env.workload.deadline
    }

    fn start(&mut self, sched: &mut Scheduler<Payload>) -> Result<()> {
        let t1 = next_interarrival(&self.spec.env.workload, &mut self.rng_arrivals);
        if t1 < self.spec.env.workload.episode_len {
            sched.schedule(t1, EventKind::TaskArrival, Payload::Task(0))?;
        }
        if self.n_slots >= 1 {
            sched.schedule(self.spec.env.slot, EventKind::SlotTick, Payload::Slot(1))?;
        }
        Ok(())
    }

    fn server(&mut self, sn: bool) -> &mut Server {
        if sn {
            &mut self.sn
        } else {
            &mut self.ap
        }
    }

    fn on_arrival(&mut self, id: usize, t: f64, sched: &mut Scheduler<Payload>) -> Result<()> {
        let env = self.spec.env;
        let w = env.workload;
        let task = sample_task(&w, id, t, &mut self.rng_work);
        self.arrival_est = update_arrival_estimate(self.arrival_est, t - self.last_arrival);
        self.last_arrival = t;
        let t_next = t + next_interarrival(&w, &mut self.rng_arrivals);
        if t_next < w.episode_len {
            sched.schedule(t_next, EventKind::TaskArrival, Payload::Task(id + 1))?;
        }

        let ap_residual = self.ap.residual_queue_time(t);
        let d_down_est = env.link.nominal_downlink(task.d_k);
        let sn_wait_est = cached_sn_wait(&self.cache.x_raw, env.sn.n_cores, w.mu_c / env.sn.freq);
        let view = ExpertView {
            ap_residual,
            ap_full: self.ap.is_full(),
            c_k: task.c_k,
            f_ap: env.ap.freq,
            f_sn: env.sn.freq,
            d_down_est,
            sn_wait_est,
        };
        let (t_loc_est, t_off_est) = expert_estimates(&view);
        let expert = expert_offload(&view);
        let chosen = match self.spec.offload {
            OffloadPolicy::Expert => expert,
            OffloadPolicy::AllLocal => Decision::Local,
            OffloadPolicy::AllOffload => Decision::Offload,
            OffloadPolicy::Semantic => {
                let model = self.spec.model.expect("checked at construction");
                let s = ApInput {
                    z_hat: self.cache.z.clone(),
                    aoi_norm: self.aoi.aoi_ap(t) / w.deadline,
                    d_down_norm: d_down_est / w.deadline,
                    idle_cores: self.ap.idle_cores() as f64,
                    qlen_norm: self.ap.queue_len() as f64 / env.ap.q_max.max(1) as f64,
                    residual_norm: ap_residual / w.deadline,
                };
                if above_half(model.p_loc(&s)?) {
                    Decision::Local
                } else {
                    Decision::Offload
                }
            }
        };
        let eps = self.spec.params.explore_eps;
        let flipped = eps > 0.0 && self.rng_explore.random::<f64>() < eps;
        let action = match (flipped, chosen) {
            (false, a) => a,
            (true, Decision::Local) => Decision::Offload,
            (true, _) => Decision::Local,
        };

        if let Some(log) = &mut self.log {
            log.tasks.push(TaskRecord {
                id,
                t,
                slot: log.slots.len() - 1,
                c_k: task.c_k,
                d_k: task.d_k,
                ap_idle: self.ap.idle_cores() as f64,
                ap_qlen_norm: self.ap.queue_len() as f64 / env.ap.q_max.max(1) as f64,
                ap_residual,
                d_down_est,
                t_loc_est,
                t_off_est,
                expert,
                action,
                from_expert: self.spec.offload == OffloadPolicy::Expert && !flipped,
                outcome: Outcome::Pending,
                t_actual: f64::NAN,
            });
        }

        debug_assert_eq!(self.tasks.len(), id);
        let mut task = task;
        task.decision = action;
        self.tasks.push(task);
        self.sn_enter.push(None);
        self.in_system += 1;
        match action {
            Decision::Local => {
                self.local += 1;
                self.place(false, id, t, sched)?;
            }
            _ => {
                self.offloaded += 1;
                let d = downlink_delay(&env.link, self.tasks[id].d_k, &mut self.rng_link);
                sched.schedule(t + d, EventKind::DownlinkDelivered, Payload::Task(id))?;
            }
        }
        Ok(())
    }

    fn place(&mut self, sn: bool, id: usize, t: f64, sched: &mut Scheduler<Payload>) -> Result<()> {
        let task = &self.tasks[id];
        let job = Job {
            id,
            cycles: task.c_k,
            deadline: task.deadline(),
        };
        if sn {
            self.sn_enter[id] = Some(t);
        }
        let server = self.server(sn);
        match server.submit(job, t) {
            Submit::Started { core, finish } => {
                sched.schedule(finish, EventKind::ServiceComplete, Payload::Core { sn, core })?;
            }
            Submit::Queued { .. } => {}
            Submit::Dropped => {
                let projected = server.residual_queue_time(t) + server.service_time(job.cycles);
                if sn {
                    self.sn_enter[id] = None;
                }
                self.fail(id, Outcome::FailOverflow, t, projected);
            }
            Submit::Expired => {
                let service = server.service_time(job.cycles);
                self.fail(id, Outcome::FailTimeout, t, service);
            }
        }
        Ok(())
    }

    fn fail(&mut self, id: usize, outcome: Outcome, t: f64, remaining: f64) {
        let task = &mut self.tasks[id];
        task.outcome = outcome;
        let t_actual = t - task.t_k + remaining;
        self.in_system -= 1;
        match outcome {
            Outcome::FailOverflow => self.fail_overflow += 1,
            _ => self.fail_timeout += 1,
        }
        if let Some(log) = &mut self.log {
            log.tasks[id].outcome = outcome;
            log.tasks[id].t_actual = t_actual;
        }
    }

    fn on_complete(&mut self, sn: bool, core: usize, t: f64, sched: &mut Scheduler<Payload>) -> Result<()> {
        let fin = self
            .server(sn)
            .finish(core)
            .ok_or_else(|| Error::Invariant(format!("completion on idle core {core}")))?;
        let id = fin.job.id;
        let task = &mut self.tasks[id];
        task.outcome = Outcome::Success;
        task.t_complete = Some(t);
        let delay = t - task.t_k;
        if delay > task.tau_k + 1e-9 {
            return Err(Error::Invariant(format!("task {id} succeeded after its deadline")));
        }
        self.successes += 1;
        self.in_system -= 1;
        self.delay_sum += delay;
        if sn {
            self.last_c_norm = fin.job.cycles / self.spec.env.workload.mu_c;
        }
        if let Some(log) = &mut self.log {
            log.tasks[id].outcome = Outcome::Success;
            log.tasks[id].t_actual = delay;
        }
        let started = self.server(sn).dispatch(t);
        for d in started {
            match d {
                Dispatch::Started { core, finish, .. } => {
                    sched.schedule(finish, EventKind::ServiceComplete, Payload::Core { sn, core })?;
                }
                Dispatch::Expired { job, waited } => {
                    if sn {
                        self.sn_expired_sojourn += waited;
                    }
                    let service = self.server(sn).service_time(job.cycles);
                    self.fail(job.id, Outcome::FailTimeout, t, service);
                }
            }
        }
        Ok(())
    }

    fn on_slot(&mut self, k: u64, t: f64, sched: &mut Scheduler<Payload>) -> Result<()> {
        let aoi_sn = self.aoi.aoi_sn(t);
        let x = self.sn.raw_state(aoi_sn, self.last_c_norm, self.arrival_est, t);
        self.slots_seen += 1;
        self.sn_count_sum += (self.spec.env.sn.n_cores - self.sn.idle_cores() + self.sn.queue_len()) as f64;
        let z = self.encode(&x)?;
        if let Some(prev) = &self.prev_z {
            self.c_sem += smoothness(&z, prev);
        }
        let update = match self.spec.update {
            UpdatePolicy::Semantic => {
                let model = self.spec.model.expect("checked at construction");
                let s = SnInput {
                    z: z.clone(),
                    sdi: sdi(&z, &self.last_sent.z, SDI_EPS),
                    qos: self.qos(),
                };
                above_half(model.p_up(&s)?)
            }
            UpdatePolicy::SdiRule => sdi(&z, &self.last_sent.z, SDI_EPS) > self.spec.params.sdi_threshold,
            UpdatePolicy::Fixed => self.fixed.tick(t),
            UpdatePolicy::ContentAware => x.idle_cores != self.last_sent.x_raw.idle_cores,
            UpdatePolicy::Qaoi => self.bucket.decide(t, aoi_sn, self.arrival_est),
            UpdatePolicy::Always => true,
            UpdatePolicy::Never => false,
        };
        if let Some(log) = &mut self.log {
            log.slots.push(SlotRecord {
                t,
                x,
                occupancy: self.sn.occupancy(),
            });
        }
        if update {
            self.send(t, x, z.clone(), sched)?;
        }
        if !z.is_empty() {
            self.prev_z = Some(z);
        }
        if k < self.n_slots {
            sched.schedule(
                (k + 1) as f64 * self.spec.env.slot,
                EventKind::SlotTick,
                Payload::Slot(k + 1),
            )?;
        }
        Ok(())
    }

    /// Estimated status delay over the deadline.
    fn qos(&self) -> f64 {
        let l = &self.spec.env.link;
        (l.s_stat / self.b_up_est + l.d_prop_mean) / self.deadline()
    }

    fn send(&mut self, t: f64, x: RawState, z: Vec<f64>, sched: &mut Scheduler<Payload>) -> Result<()> {
        let link: LinkConfig = self.spec.env.link;
        let seq = self.in_flight.len();
        let pkt = StatusPacket {
            gen_time: t,
            z,
            x_raw: x,
            seq: seq as u64,
        };
        let delay = uplink_delay(&link, &mut self.rng_link);
        // bandwidth is constant, so the realized rate is the configured one
        let realized = link.s_stat / link.status_tx_time();
        self.b_up_est = B_UP_EWMA * realized + (1.0 - B_UP_EWMA) * self.b_up_est;
        self.last_sent = pkt.clone();
        self.in_flight.push(Some(pkt));
        self.update_times.push(t);
        sched.schedule(t + delay, EventKind::UplinkDelivered, Payload::Packet(seq))?;
        Ok(())
    }

    fn on_uplink(&mut self, seq: usize) -> Result<()> {
        let pkt = self
            .in_flight
            .get_mut(seq)
            .and_then(Option::take)
            .ok_or_else(|| Error::Invariant(format!("packet {seq} delivered twice")))?;
        if self.aoi.deliver(pkt.gen_time) {
            self.cache = pkt;
        }
        Ok(())
    }

    fn check(&self) -> Result<()> {
        self.ap.check_invariants().map_err(Error::Invariant)?;
        self.sn.check_invariants().map_err(Error::Invariant)?;
        let failures = self.fail_overflow + self.fail_timeout;
        if self.tasks.len() as u64 != self.successes + failures + self.in_system {
            return Err(Error::Invariant("task conservation broken".into()));
        }
        if self.aoi.last_acked_gen_time > self.aoi.last_received_gen_time {
            return Err(Error::Invariant("ACK ahead of delivery".into()));
        }
        Ok(())
    }

    fn finish(self, end_time: f64) -> EpisodeOutput {
        let env = self.spec.env;
        let cost = self.spec.cost;
        let t_len = env.workload.episode_len;
        let arrivals = self.tasks.len() as u64;
        let failures = self.fail_overflow + self.fail_timeout;
        let updates = self.update_times.len() as u64;
        let c_task = failures as f64 * cost.p_fail;
        let c_comm = updates as f64 * cost.omega_up + self.offloaded as f64 * cost.omega_down;
        let j = (c_task + cost.lambda_comm * c_comm + cost.lambda_sem * self.c_sem) / self.n_slots.max(1) as f64;
        let (mut sojourn, mut admitted) = (0.0, 0u64);
        for (task, enter) in self.tasks.iter().zip(&self.sn_enter) {
            if let Some(e) = enter {
                admitted += 1;
                if let Some(done) = task.t_complete {
                    sojourn += done - e;
                }
            }
        }
        sojourn += self.sn_expired_sojourn;
        let metrics = Metrics {
            arrivals,
            successes: self.successes,
            failures,
            fail_overflow: self.fail_overflow,
            fail_timeout: self.fail_timeout,
            local: self.local,
            offloaded: self.offloaded,
            updates,
            success_rate: if arrivals == 0 {
                1.0
            } else {
                self.successes as f64 / arrivals as f64
            },
            update_freq: updates as f64 / t_len,
            mean_delay: if self.successes == 0 {
                0.0
            } else {
                self.delay_sum / self.successes as f64
            },
            c_task,
            c_comm,
            c_sem: self.c_sem,
            j,
            sn_mean_in_system: if self.slots_seen == 0 {
                0.0
            } else {
                self.sn_count_sum / self.slots_seen as f64
            },
            sn_throughput: admitted as f64 / t_len,
            sn_mean_sojourn: if admitted == 0 { 0.0 } else { sojourn / admitted as f64 },
            end_time,
        };
        let stats = self.stats_now();
        EpisodeOutput {
            metrics,
            stats,
            update_times: self.update_times,
            log: self.log,
        }
    }

    fn stats_now(&self) -> EpisodeStats {
        EpisodeStats {
            events: self.events,
            arrivals: self.tasks.len() as u64,
            completed: self.successes,
            failed: self.fail_overflow + self.fail_timeout,
            in_system: self.in_system,
            updates: self.update_times.len() as u64,
        }
    }
}

impl Process for Episode<'_> {
    type Payload = Payload;

    fn handle(&mut self, ev: Event<Payload>, sched: &mut Scheduler<Payload>) -> Result<()> {
        self.events += 1;
        let t = ev.time;
        match (ev.kind, ev.payload) {
            (EventKind::TaskArrival, Payload::Task(id)) => self.on_arrival(id, t, sched)?,
            (EventKind::DownlinkDelivered, Payload::Task(id)) => self.place(true, id, t, sched)?,
            (EventKind::ServiceComplete, Payload::Core { sn, core }) => self.on_complete(sn, core, t, sched)?,
            (EventKind::UplinkDelivered, Payload::Packet(seq)) => self.on_uplink(seq)?,
            (EventKind::SlotTick, Payload::Slot(k)) => self.on_slot(k, t, sched)?,
            (kind, p) => return Err(Error::Invariant(format!("{kind:?} carries {p:?}"))),
        }
        if self.spec.strict {
            self.check()?;
        }
        Ok(())
    }

    fn stats(&self) -> EpisodeStats {
        self.stats_now()
    }

    fn entity(&self, payload: &Payload) -> u64 {
        match *payload {
            Payload::Task(id) => id as u64,
            Payload::Core { core, .. } => core as u64,
            Payload::Packet(seq) => seq as u64,
            Payload::Slot(k) => k,
        }
    }
}

/// Runs the episode to its configured length and then drains every task
/// still in flight, so each arrival ends as a success or a failure.
pub fn run_episode(spec: EpisodeSpec<'_>, mut trace: Option<&mut EventTrace>) -> Result<EpisodeOutput> {
    let mut ep = Episode::new(spec)?;
    let mut sched = Scheduler::new();
    ep.start(&mut sched)?;
    run_until(&mut sched, &mut ep, spec.env.workload.episode_len, trace.as_deref_mut())?;
    run_until(&mut sched, &mut ep, f64::INFINITY, trace.as_deref_mut())?;
    ep.check()?;
    if ep.in_system != 0 {
        return Err(Error::Invariant(format!("{} tasks left after the drain", ep.in_system)));
    }
    let end = sched.now();
    if let Some(tr) = trace {
        tr.flush()?;
    }
    Ok(ep.finish(end))
}

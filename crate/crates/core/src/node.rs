//! Non-preemptive FCFS multi-core server shared by the AP and the SN, and the
//! six-feature raw resource state.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Smoothing factor of the inter-arrival moving average.
pub const ARRIVAL_EWMA_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    pub n_cores: usize,
    /// Cycles per second per core.
    pub freq: f64,
    /// Waiting-room capacity in tasks, not counting tasks in service.
    pub q_max: usize,
}

impl ServerConfig {
    pub fn ap() -> Self {
        Self {
            n_cores: 2,
            freq: 0.8e9,
            q_max: 25,
        }
    }

    pub fn sn() -> Self {
        Self {
            n_cores: 4,
            freq: 1.0e9,
            q_max: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cores == 0 || !(self.freq > 0.0 && self.freq.is_finite()) {
            return Err(Error::Config(
                "server needs at least one core and a positive frequency".into(),
            ));
        }
        Ok(())
    }

    /// Tasks per second at full utilisation for tasks of `mean_cycles`.
    pub fn capacity(&self, mean_cycles: f64) -> f64 {
        self.n_cores as f64 * self.freq / mean_cycles
    }
}

/// What the server knows about a task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub id: usize,
    pub cycles: f64,
    /// Absolute deadline.
    pub deadline: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Submit {
    Started {
        core: usize,
        finish: f64,
    },
    Queued {
        position: usize,
    },
    /// Waiting room full.
    Dropped,
    /// Cannot finish before its deadline even if started now.
    Expired,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dispatch {
    Started {
        core: usize,
        job: Job,
        finish: f64,
    },
    /// Reached the head of the queue too late to meet its deadline.
    Expired {
        job: Job,
        waited: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Finished {
    pub job: Job,
    pub start: f64,
}

#[derive(Debug, Clone, Copy)]
struct Running {
    job: Job,
    start: f64,
    finish: f64,
}

#[derive(Debug, Clone, Copy)]
struct Waiting {
    job: Job,
    enqueued: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ServerStats {
    pub submitted: u64,
    pub started: u64,
    pub completed: u64,
    pub dropped: u64,
    pub expired: u64,
    /// Tasks that left the waiting room or started directly, and their total wait.
    pub waited_tasks: u64,
    pub total_wait: f64,
}

/// Six-dimensional SN resource state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RawState {
    pub idle_cores: f64,
    /// Queue length per core.
    pub qlen_norm: f64,
    /// How long the queue head has waited.
    pub hol_wait: f64,
    pub aoi: f64,
    /// Cycles of the last completed task over the mean.
    pub last_workload: f64,
    /// Moving average of inter-arrival gaps.
    pub arrival_est: f64,
}

impl RawState {
    pub const DIM: usize = 6;

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.idle_cores,
            self.qlen_norm,
            self.hol_wait,
            self.aoi,
            self.last_workload,
            self.arrival_est,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            idle_cores: a[0],
            qlen_norm: a[1],
            hol_wait: a[2],
            aoi: a[3],
            last_workload: a[4],
            arrival_est: a[5],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Server {
    cfg: ServerConfig,
    cores: Vec<Option<Running>>,
    queue: VecDeque<Waiting>,
    stats: ServerStats,
    area: f64,
    area_t: f64,
}

impl Server {
    pub fn new(cfg: ServerConfig) -> Self {
        Self {
            cfg,
            cores: vec![None; cfg.n_cores],
            queue: VecDeque::new(),
            stats: ServerStats::default(),
            area: 0.0,
            area_t: 0.0,
        }
    }

    pub fn config(&self) -> &ServerConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &ServerStats {
        &self.stats
    }

    pub fn service_time(&self, cycles: f64) -> f64 {
        cycles / self.cfg.freq
    }

    pub fn idle_cores(&self) -> usize {
        self.cores.iter().filter(|c| c.is_none()).count()
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn occupancy(&self) -> f64 {
        if self.cfg.q_max == 0 {
            return 0.0;
        }
        self.queue.len() as f64 / self.cfg.q_max as f64
    }

    pub fn is_full(&self) -> bool {
        self.idle_cores() == 0 && self.queue.len() >= self.cfg.q_max
    }

    /// Integral of the queue length over `[0, t_now]`.
    pub fn queue_area(&self, t_now: f64) -> f64 {
        self.area + self.queue.len() as f64 * (t_now - self.area_t).max(0.0)
    }

    fn touch(&mut self, t_now: f64) {
        self.area = self.queue_area(t_now);
        self.area_t = t_now;
    }

    fn start(&mut self, core: usize, job: Job, t_now: f64) -> f64 {
        let finish = t_now + self.service_time(job.cycles);
        self.cores[core] = Some(Running {
            job,
            start: t_now,
            finish,
        });
        self.stats.started += 1;
        finish
    }

    fn can_finish(&self, job: &Job, t_now: f64) -> bool {
        t_now + self.service_time(job.cycles) <= job.deadline
    }

    pub fn submit(&mut self, job: Job, t_now: f64) -> Submit {
        self.stats.submitted += 1;
        if let Some(core) = self.cores.iter().position(Option::is_none) {
            if !self.can_finish(&job, t_now) {
                self.stats.expired += 1;
                return Submit::Expired;
            }
            self.stats.waited_tasks += 1;
            let finish = self.start(core, job, t_now);
            return Submit::Started { core, finish };
        }
        if self.queue.len() >= self.cfg.q_max {
            self.stats.dropped += 1;
            return Submit::Dropped;
        }
        self.touch(t_now);
        self.queue.push_back(Waiting { job, enqueued: t_now });
        Submit::Queued {
            position: self.queue.len() - 1,
        }
    }

    /// Frees `core` after its task completes.
    pub fn finish(&mut self, core: usize) -> Option<Finished> {
        let run = self.cores.get_mut(core)?.take()?;
        self.stats.completed += 1;
        Some(Finished {
            job: run.job,
            start: run.start,
        })
    }

    /// Hands queued work to idle cores in FCFS order.
    pub fn dispatch(&mut self, t_now: f64) -> Vec<Dispatch> {
        let mut out = Vec::new();
        self.touch(t_now);
        while let Some(core) = self.cores.iter().position(Option::is_none) {
            let Some(w) = self.queue.pop_front() else { break };
            let waited = t_now - w.enqueued;
            self.stats.waited_tasks += 1;
            self.stats.total_wait += waited;
            if self.can_finish(&w.job, t_now) {
                let finish = self.start(core, w.job, t_now);
                out.push(Dispatch::Started {
                    core,
                    job: w.job,
                    finish,
                });
            } else {
                self.stats.expired += 1;
                out.push(Dispatch::Expired { job: w.job, waited });
            }
        }
        out
    }

    /// Time a task submitted now would wait before starting, found by
    /// replaying the current backlog on the cores.
    pub fn residual_queue_time(&self, t_now: f64) -> f64 {
        if self.idle_cores() > 0 {
            return 0.0;
        }
        let mut free: BinaryHeap<Reverse<OrdF64>> =
            self.cores.iter().flatten().map(|r| Reverse(OrdF64(r.finish))).collect();
        for w in &self.queue {
            let Reverse(OrdF64(f)) = free.pop().expect("all cores busy");
            let start = f.max(t_now);
            let end = start + self.service_time(w.job.cycles);
            // tasks that would miss their deadline are discarded at pick time
            free.push(Reverse(OrdF64(if end <= w.job.deadline { end } else { start })));
        }
        let Reverse(OrdF64(f)) = free.pop().expect("all cores busy");
        (f - t_now).max(0.0)
    }

    pub fn hol_wait(&self, t_now: f64) -> f64 {
        self.queue.front().map_or(0.0, |w| t_now - w.enqueued)
    }

    pub fn raw_state(&self, aoi: f64, last_c_norm: f64, arrival_est: f64, t_now: f64) -> RawState {
        RawState {
            idle_cores: self.idle_cores() as f64,
            qlen_norm: self.queue.len() as f64 / self.cfg.n_cores as f64,
            hol_wait: self.hol_wait(t_now),
            aoi,
            last_workload: last_c_norm,
            arrival_est,
        }
    }

    /// Bounded queue, work conservation and conservation of submitted tasks.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if self.queue.len() > self.cfg.q_max {
            return Err(format!("queue {} exceeds q_max {}", self.queue.len(), self.cfg.q_max));
        }
        if !self.queue.is_empty() && self.idle_cores() > 0 {
            return Err("idle core while tasks are queued".into());
        }
        let s = &self.stats;
        let busy = (self.cfg.n_cores - self.idle_cores()) as u64;
        if s.completed + s.dropped + s.expired + busy + self.queue.len() as u64 != s.submitted {
            return Err(format!("task conservation broken: {s:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

pub fn update_arrival_estimate(prev_est: f64, new_gap: f64) -> f64 {
    ARRIVAL_EWMA_ALPHA * new_gap + (1.0 - ARRIVAL_EWMA_ALPHA) * prev_est
}

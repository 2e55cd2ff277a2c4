//! Poisson task arrivals with Gaussian cycle counts and a data size that is
//! linearly tied to the cycle count.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Bits per decimal megabyte.
pub const BITS_PER_MB: f64 = 8e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Local,
    Offload,
    Undecided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Pending,
    Success,
    FailOverflow,
    FailTimeout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: usize,
    /// Arrival time at the AP.
    pub t_k: f64,
    /// Input size in bits.
    pub d_k: f64,
    pub c_k: f64,
    /// Relative deadline.
    pub tau_k: f64,
    pub decision: Decision,
    pub outcome: Outcome,
    pub t_complete: Option<f64>,
}

impl Task {
    pub fn deadline(&self) -> f64 {
        self.t_k + self.tau_k
    }

    pub fn is_failed(&self) -> bool {
        matches!(self.outcome, Outcome::FailOverflow | Outcome::FailTimeout)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadConfig {
    /// Arrivals per second.
    pub lambda_in: f64,
    pub mu_c: f64,
    pub sigma_c: f64,
    /// Mean input size in bits.
    pub mu_d: f64,
    /// Standard deviation of the input size as a fraction of `mu_d`.
    pub sigma_d_frac: f64,
    pub deadline: f64,
    pub episode_len: f64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            lambda_in: 30.0,
            mu_c: 1e8,
            sigma_c: 2e7,
            mu_d: BITS_PER_MB,
            sigma_d_frac: 0.2,
            deadline: 1.8,
            episode_len: 500.0,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.lambda_in,
            self.mu_c,
            self.sigma_c,
            self.mu_d,
            self.sigma_d_frac,
            self.deadline,
            self.episode_len,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("workload parameters must be positive and finite".into()));
        }
        if self.sigma_c >= self.mu_c {
            return Err(Error::Config("workload sigma_c must be below mu_c".into()));
        }
        Ok(())
    }
}

pub fn next_interarrival<R: Rng + ?Sized>(cfg: &WorkloadConfig, rng: &mut R) -> f64 {
    Exp::new(cfg.lambda_in).expect("lambda_in > 0").sample(rng)
}

/// Draws one task. Cycles and size share a single standard-normal deviate,
/// so they are perfectly linearly correlated until the cycle floor kicks in.
pub fn sample_task<R: Rng + ?Sized>(cfg: &WorkloadConfig, id: usize, t_now: f64, rng: &mut R) -> Task {
    task_from_deviate(cfg, id, t_now, StandardNormal.sample(rng))
}

/// The deterministic part of [`sample_task`] for a given standard deviate `z`.
pub fn task_from_deviate(cfg: &WorkloadConfig, id: usize, t_now: f64, z: f64) -> Task {
    let c_k = (cfg.mu_c + cfg.sigma_c * z).max(0.1 * cfg.mu_c);
    let z_eff = (c_k - cfg.mu_c) / cfg.sigma_c;
    let d_k = (cfg.mu_d * (1.0 + cfg.sigma_d_frac * z_eff)).max(1e-3 * cfg.mu_d);
    Task {
        id,
        t_k: t_now,
        d_k,
        c_k,
        tau_k: cfg.deadline,
        decision: Decision::Undecided,
        outcome: Outcome::Pending,
        t_complete: None,
    }
}

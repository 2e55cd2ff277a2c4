//! Update and offloading decision makers: the learned heads, the SDI rule,
//! the periodic, content-aware and token-bucket baselines, and the
//! latency-estimating expert used for labels and baseline offloading.

use rand::Rng;
use semsync_nn::{sigmoid, Mlp, MlpCache, ModelParams, Tensor2};
use serde::{Deserialize, Serialize};

use crate::node::RawState;
use crate::workload::Decision;
use crate::{Error, Result};

/// Hidden width of both heads.
pub const HIDDEN: usize = 64;

/// Two-hidden-layer GeLU MLP with a sigmoid scalar output.
#[derive(Debug, Clone)]
pub struct PolicyHead {
    pub mlp: Mlp,
}

impl PolicyHead {
    pub fn new<R: Rng + ?Sized>(params: &mut ModelParams, prefix: &str, d_in: usize, rng: &mut R) -> Result<Self> {
        Self::with_hidden(params, prefix, d_in, HIDDEN, rng)
    }

    pub fn with_hidden<R: Rng + ?Sized>(
        params: &mut ModelParams,
        prefix: &str,
        d_in: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::new(params, prefix, &[d_in, hidden, hidden, 1], rng)?,
        })
    }

    pub fn d_in(&self) -> usize {
        self.mlp.d_in()
    }

    /// Pre-sigmoid outputs, `n x 1`.
    pub fn logits(&self, params: &ModelParams, x: &Tensor2) -> Result<(Tensor2, MlpCache)> {
        Ok(self.mlp.forward(params, x)?)
    }

    pub fn probs(&self, params: &ModelParams, x: &Tensor2) -> Result<Tensor2> {
        Ok(sigmoid(&self.logits(params, x)?.0))
    }

    pub fn prob(&self, params: &ModelParams, x: &[f64]) -> Result<f64> {
        if x.len() != self.d_in() {
            return Err(Error::Config(format!(
                "head expects {} inputs, got {}",
                self.d_in(),
                x.len()
            )));
        }
        let row = Tensor2::from_shape_vec((1, x.len()), x.to_vec()).expect("1 x n");
        Ok(self.probs(params, &row)?[[0, 0]])
    }

    /// Sets the output layer to zero so the head emits exactly 0.5.
    pub fn zero_output(&self, params: &mut ModelParams) {
        let out = self.mlp.output_layer();
        params.value_mut(out.w).fill(0.0);
        if let Some(b) = out.b {
            params.value_mut(b).fill(0.0);
        }
    }
}

/// Decisions fire only strictly above one half.
pub fn above_half(p: f64) -> bool {
    p > 0.5
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnInput {
    pub z: Vec<f64>,
    pub sdi: f64,
    /// Estimated status delay over the deadline.
    pub qos: f64,
}

impl SnInput {
    pub fn dim(d_sem: usize) -> usize {
        d_sem + 2
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.z.clone();
        v.push(self.sdi);
        v.push(self.qos);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApInput {
    pub z_hat: Vec<f64>,
    /// AoI over the deadline.
    pub aoi_norm: f64,
    /// Nominal downlink delay over the deadline.
    pub d_down_norm: f64,
    pub idle_cores: f64,
    /// Local queue length over its capacity.
    pub qlen_norm: f64,
    /// Local residual queue time over the deadline.
    pub residual_norm: f64,
}

impl ApInput {
    pub fn dim(d_sem: usize) -> usize {
        d_sem + 5
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.z_hat.clone();
        v.extend([
            self.aoi_norm,
            self.d_down_norm,
            self.idle_cores,
            self.qlen_norm,
            self.residual_norm,
        ]);
        v
    }
}

/// Returns `(p_up, update)`.
pub fn sn_decide(head: &PolicyHead, params: &ModelParams, s: &SnInput) -> Result<(f64, bool)> {
    let p = head.prob(params, &s.to_vec())?;
    Ok((p, above_half(p)))
}

/// Returns `(p_loc, decision)`.
pub fn ap_decide(head: &PolicyHead, params: &ModelParams, s: &ApInput) -> Result<(f64, Decision)> {
    let p = head.prob(params, &s.to_vec())?;
    Ok((
        p,
        if above_half(p) {
            Decision::Local
        } else {
            Decision::Offload
        },
    ))
}

/// Periodic updates with the first one at `t = period`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPolicy {
    pub period: f64,
    next_due: f64,
}

impl FixedPolicy {
    pub fn new(period: f64) -> Self {
        Self {
            period,
            next_due: period,
        }
    }

    pub fn tick(&mut self, t: f64) -> bool {
        // slot times are k * dt, so allow for their rounding error
        if t + 1e-9 >= self.next_due {
            self.next_due += self.period;
            true
        } else {
            false
        }
    }
}

/// Update whenever the idle-core count differs from the last transmitted one.
pub fn content_aware(idle_now: f64, idle_last_sent: f64) -> bool {
    idle_now != idle_last_sent
}

pub fn sdi_rule(sdi: f64, threshold: f64) -> bool {
    sdi > threshold
}

/// Token-bucket rate limiter with an AoI trigger. The bucket starts empty,
/// so no more than `rate * t` updates are ever granted by time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QaoiBucket {
    pub rate: f64,
    pub capacity: f64,
    pub tokens: f64,
    last: f64,
}

impl QaoiBucket {
    pub fn new(rate: f64, capacity: f64) -> Self {
        Self {
            rate,
            capacity,
            tokens: 0.0,
            last: 0.0,
        }
    }

    fn refill(&mut self, t: f64) {
        if t > self.last {
            self.tokens = (self.tokens + self.rate * (t - self.last)).min(self.capacity);
            self.last = t;
        }
    }

    /// Updates when a token is available and the AoI exceeds half the
    /// current inter-arrival estimate.
    pub fn decide(&mut self, t: f64, aoi: f64, arrival_est: f64) -> bool {
        self.refill(t);
        if qaoi_bucket_policy(aoi, self.tokens, arrival_est) {
            // refills of k * dt carry rounding error; never let the balance go negative
            self.tokens = (self.tokens - 1.0).max(0.0);
            true
        } else {
            false
        }
    }
}

/// Stateless trigger used by [`QaoiBucket`].
pub fn qaoi_bucket_policy(aoi: f64, tokens: f64, arrival_est: f64) -> bool {
    tokens + 1e-9 >= 1.0 && aoi > 0.5 * arrival_est && aoi > 0.0
}

/// What the expert offloader sees when a task arrives at the AP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertView {
    pub ap_residual: f64,
    pub ap_full: bool,
    pub c_k: f64,
    pub f_ap: f64,
    pub f_sn: f64,
    pub d_down_est: f64,
    /// SN wait predicted from the cached status.
    pub sn_wait_est: f64,
}

/// `(t_loc, t_off)` latency estimates.
pub fn expert_estimates(v: &ExpertView) -> (f64, f64) {
    (
        v.ap_residual + v.c_k / v.f_ap,
        v.d_down_est + v.sn_wait_est + v.c_k / v.f_sn,
    )
}

/// Local iff strictly faster by estimate; a full AP queue always offloads.
pub fn expert_offload(v: &ExpertView) -> Decision {
    let (t_loc, t_off) = expert_estimates(v);
    if !v.ap_full && t_loc < t_off {
        Decision::Local
    } else {
        Decision::Offload
    }
}

/// SN waiting time predicted from a cached raw state: zero with an idle core,
/// otherwise the queue ahead shared over the cores.
pub fn cached_sn_wait(x: &RawState, n_cores: usize, mean_service: f64) -> f64 {
    if x.idle_cores >= 1.0 {
        0.0
    } else {
        (x.qlen_norm * n_cores as f64 + 0.5) * mean_service / n_cores as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdatePolicy {
    /// Learned SN head.
    Semantic,
    SdiRule,
    Fixed,
    ContentAware,
    Qaoi,
    Always,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OffloadPolicy {
    /// Learned AP head.
    Semantic,
    Expert,
    AllLocal,
    AllOffload,
}

impl UpdatePolicy {
    pub fn name(self) -> &'static str {
        match self {
            Self::Semantic => "semantic",
            Self::SdiRule => "sdi-rule",
            Self::Fixed => "fixed",
            Self::ContentAware => "content-aware",
            Self::Qaoi => "qaoi",
            Self::Always => "always",
            Self::Never => "never",
        }
    }

    /// Whether the policy needs encoder outputs at the SN.
    pub fn needs_encoder(self) -> bool {
        matches!(self, Self::Semantic | Self::SdiRule)
    }
}

impl OffloadPolicy {
    pub fn name(self) -> &'static str {
        match self {
            Self::Semantic => "semantic",
            Self::Expert => "expert",
            Self::AllLocal => "all-local",
            Self::AllOffload => "all-offload",
        }
    }
}

impl std::str::FromStr for UpdatePolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::Config(format!("unknown update policy `{s}`")))
    }
}

impl std::str::FromStr for OffloadPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::Config(format!("unknown offload policy `{s}`")))
    }
}

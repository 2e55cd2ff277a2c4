//! Status uplink and task downlink delay models, status packets and AoI
//! bookkeeping on both ends.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::node::RawState;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkConfig {
    /// Uplink bandwidth, bits per second.
    pub b_up: f64,
    /// Downlink bandwidth, bits per second.
    pub b_down: f64,
    pub d_prop_mean: f64,
    /// Propagation delay is uniform in `mean * (1 +- jitter_frac)`.
    pub d_prop_jitter_frac: f64,
    /// Status packet size in bits.
    pub s_stat: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            b_up: 2e7,
            b_down: 5e7,
            d_prop_mean: 0.005,
            d_prop_jitter_frac: 0.2,
            s_stat: 2048.0,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.b_up > 0.0 && self.b_down > 0.0 && self.s_stat > 0.0) {
            return Err(Error::Config("link bandwidths and packet size must be positive".into()));
        }
        if self.d_prop_mean.is_nan() || self.d_prop_mean < 0.0 || !(0.0..1.0).contains(&self.d_prop_jitter_frac) {
            return Err(Error::Config("link propagation delay or jitter out of range".into()));
        }
        Ok(())
    }

    /// Status transmission time without propagation.
    pub fn status_tx_time(&self) -> f64 {
        self.s_stat / self.b_up
    }

    /// Downlink delay with the nominal bandwidth and mean propagation delay.
    pub fn nominal_downlink(&self, d_k: f64) -> f64 {
        d_k / self.b_down + self.d_prop_mean
    }
}

pub fn prop_delay<R: Rng + ?Sized>(cfg: &LinkConfig, rng: &mut R) -> f64 {
    if cfg.d_prop_jitter_frac == 0.0 || cfg.d_prop_mean == 0.0 {
        return cfg.d_prop_mean;
    }
    let j = cfg.d_prop_jitter_frac;
    cfg.d_prop_mean * (1.0 + rng.random_range(-j..=j))
}

pub fn uplink_delay<R: Rng + ?Sized>(cfg: &LinkConfig, rng: &mut R) -> f64 {
    cfg.status_tx_time() + prop_delay(cfg, rng)
}

pub fn downlink_delay<R: Rng + ?Sized>(cfg: &LinkConfig, d_k: f64, rng: &mut R) -> f64 {
    d_k / cfg.b_down + prop_delay(cfg, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatusPacket {
    pub gen_time: f64,
    pub z: Vec<f64>,
    /// Raw state at generation, used by the baseline offloader.
    pub x_raw: RawState,
    pub seq: u64,
}

/// Freshest delivered generation time (AP side) and acknowledged generation
/// time (SN side). ACKs are instantaneous at delivery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoiTracker {
    pub last_received_gen_time: f64,
    pub last_acked_gen_time: f64,
}

impl AoiTracker {
    /// Both ends start from a status generated at `t0`.
    pub fn new(t0: f64) -> Self {
        Self {
            last_received_gen_time: t0,
            last_acked_gen_time: t0,
        }
    }

    /// Applies a delivery; returns false if the packet is staler than the
    /// cached status and must be discarded.
    pub fn deliver(&mut self, gen_time: f64) -> bool {
        self.last_acked_gen_time = self.last_acked_gen_time.max(gen_time);
        if gen_time > self.last_received_gen_time {
            self.last_received_gen_time = gen_time;
            true
        } else {
            false
        }
    }

    pub fn aoi_ap(&self, t: f64) -> f64 {
        (t - self.last_received_gen_time).max(0.0)
    }

    pub fn aoi_sn(&self, t: f64) -> f64 {
        (t - self.last_acked_gen_time).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn no_prop() -> LinkConfig {
        LinkConfig {
            d_prop_mean: 0.0,
            d_prop_jitter_frac: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn uplink_is_packet_over_bandwidth() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((uplink_delay(&no_prop(), &mut rng) - 1.024e-4).abs() < 1e-18);
    }

    #[test]
    fn downlink_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = no_prop();
        assert!((downlink_delay(&c, 8e6, &mut rng) - 0.16).abs() < 1e-15);
        assert!((downlink_delay(&c, 16e6, &mut rng) - 0.32).abs() < 1e-15);
        let c = LinkConfig {
            d_prop_jitter_frac: 0.0,
            ..Default::default()
        };
        assert!((downlink_delay(&c, 8e6, &mut rng) - 0.165).abs() < 1e-15);
    }

    #[test]
    fn zero_jitter_is_deterministic() {
        let c = LinkConfig {
            d_prop_jitter_frac: 0.0,
            ..Default::default()
        };
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(uplink_delay(&c, &mut a), uplink_delay(&c, &mut b));
    }

    #[test]
    fn jitter_stays_in_band() {
        let c = LinkConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let d = prop_delay(&c, &mut rng);
            assert!((0.004..=0.006).contains(&d), "{d}");
        }
    }

    #[test]
    fn stale_packet_is_discarded() {
        let mut a = AoiTracker::new(0.0);
        assert!(a.deliver(2.0));
        assert!(!a.deliver(1.0));
        assert_eq!(a.last_received_gen_time, 2.0);
        assert_eq!(a.aoi_ap(2.5), 0.5);
    }

    #[test]
    fn aoi_grows_linearly_without_packets() {
        let mut a = AoiTracker::new(0.0);
        a.deliver(1.0);
        assert_eq!(a.aoi_ap(1.0), 0.0);
        assert_eq!(a.aoi_ap(4.0), 3.0);
    }

    proptest! {
        #[test]
        fn ack_never_precedes_delivery(gens in prop::collection::vec(0.0f64..100.0, 1..50)) {
            let mut a = AoiTracker::new(0.0);
            let mut t: f64 = 0.0;
            for g in gens {
                t = t.max(g) + 0.001;
                let before = a.aoi_ap(t);
                let fresh = a.deliver(g);
                prop_assert!(a.last_acked_gen_time <= a.last_received_gen_time);
                prop_assert!(a.aoi_ap(t) <= before);
                prop_assert_eq!(fresh, a.last_received_gen_time == g);
            }
        }
    }
}

//! Transformer state encoder, feature scaling, the semantic deviation index
//! and the smoothness regulariser.

use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semsync_nn::{positional_encoding, BlockCache, EncoderBlock, Linear, ModelParams, Tensor2};
use serde::{Deserialize, Serialize};

use crate::node::RawState;
use crate::{Error, Result};

pub type SemanticVector = Vec<f64>;

/// Parameter-name prefix reserved for the encoder.
pub const ENCODER_PREFIX: &str = "enc";

/// Default SDI epsilon.
pub const SDI_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Window length in slots.
    pub w: usize,
    pub d_in: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub dropout: f64,
    pub d_sem: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            w: 1,
            d_in: RawState::DIM,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ffn: 256,
            dropout: 0.1,
            d_sem: 3,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w == 0 || self.d_in == 0 || self.d_sem == 0 || self.n_heads == 0 {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "encoder d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("encoder dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Linear projection, sinusoidal positions, pre-LN blocks, mean pooling over
/// the window and a linear head to `d_sem`.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    input: Linear,
    blocks: Vec<EncoderBlock>,
    head: Linear,
    pe: Tensor2,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    x: Tensor2,
    blocks: Vec<BlockCache>,
    pooled: Tensor2,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(params: &mut ModelParams, cfg: EncoderConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let p = ENCODER_PREFIX;
        let input = Linear::new(params, &format!("{p}.in"), cfg.d_in, cfg.d_model, rng)?;
        let blocks = (0..cfg.n_layers)
            .map(|i| {
                EncoderBlock::new(
                    params,
                    &format!("{p}.b{i}"),
                    cfg.d_model,
                    cfg.n_heads,
                    cfg.d_ffn,
                    cfg.dropout,
                    rng,
                )
            })
            .collect::<semsync_nn::Result<Vec<_>>>()?;
        let head = Linear::new(params, &format!("{p}.head"), cfg.d_model, cfg.d_sem, rng)?;
        Ok(Self {
            cfg,
            input,
            blocks,
            head,
            pe: positional_encoding(cfg.w, cfg.d_model),
        })
    }

    /// `x` stacks `n` windows of `w` rows each; returns `n x d_sem`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        params: &ModelParams,
        x: &Tensor2,
        train: bool,
        rng: &mut R,
    ) -> Result<(Tensor2, EncoderCache)> {
        let w = self.cfg.w;
        if x.ncols() != self.cfg.d_in || !x.nrows().is_multiple_of(w) {
            return Err(Error::Config(format!(
                "encoder input {:?} is not n*{w} x {}",
                x.dim(),
                self.cfg.d_in
            )));
        }
        let mut h = self.input.forward(params, x)?;
        if w == 1 {
            h += &self.pe.row(0);
        } else {
            for (r, mut row) in h.axis_iter_mut(Axis(0)).enumerate() {
                row += &self.pe.row(r % w);
            }
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (out, c) = b.forward(params, &h, w, train, rng)?;
            caches.push(c);
            h = out;
        }
        let pooled = if w == 1 {
            h
        } else {
            h.into_shape_with_order((x.nrows() / w, w, self.cfg.d_model))
                .expect("contiguous")
                .mean_axis(Axis(1))
                .expect("w > 0")
        };
        let z = self.head.forward(params, &pooled)?;
        Ok((
            z,
            EncoderCache {
                x: x.clone(),
                blocks: caches,
                pooled,
            },
        ))
    }

    /// Accumulates parameter gradients for `dz` (`n x d_sem`).
    pub fn backward(&self, params: &mut ModelParams, cache: &EncoderCache, dz: &Tensor2) {
        let w = self.cfg.w;
        let dpooled = self.head.backward(params, &cache.pooled, dz);
        let mut dh = if w == 1 {
            dpooled
        } else {
            let n = dpooled.nrows();
            let mut dh = Tensor2::zeros((n * w, self.cfg.d_model));
            for i in 0..n {
                let g = &dpooled.row(i) / w as f64;
                for r in 0..w {
                    dh.row_mut(i * w + r).assign(&g);
                }
            }
            dh
        };
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            dh = b.backward(params, c, &dh);
        }
        self.input.backward_params(params, &cache.x, &dh);
    }

    /// Evaluation-mode encoding of a batch of normalised windows.
    pub fn encode_batch(&self, params: &ModelParams, x: &Tensor2) -> Result<Tensor2> {
        // dropout is inactive in eval mode, so the generator is never drawn from
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(params, x, false, &mut rng)?.0)
    }

    /// Encodes one normalised `w x d_in` window.
    pub fn encode(&self, params: &ModelParams, window: &Tensor2) -> Result<SemanticVector> {
        Ok(self.encode_batch(params, window)?.row(0).to_vec())
    }
}

/// Scales raw features to O(1) and clips them to `[0, clip]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureNormalizer {
    pub n_cores: f64,
    pub deadline: f64,
    /// Reference scale of the arrival estimate.
    pub arrival_scale: f64,
    pub clip: f64,
}

impl FeatureNormalizer {
    pub fn new(sn_cores: usize, deadline: f64) -> Self {
        Self {
            n_cores: sn_cores as f64,
            deadline,
            arrival_scale: 1.0,
            clip: 10.0,
        }
    }

    fn scales(&self) -> [f64; 6] {
        [self.n_cores, 1.0, self.deadline, self.deadline, 1.0, self.arrival_scale]
    }

    pub fn normalize(&self, x: &RawState) -> [f64; 6] {
        let mut out = x.to_array();
        for (v, s) in out.iter_mut().zip(self.scales()) {
            *v = (*v / s).clamp(0.0, self.clip);
        }
        out
    }

    pub fn denormalize(&self, v: &[f64; 6]) -> RawState {
        let mut a = *v;
        for (x, s) in a.iter_mut().zip(self.scales()) {
            *x *= s;
        }
        RawState::from_array(a)
    }

    /// One-row tensor for the encoder.
    pub fn row(&self, x: &RawState) -> Tensor2 {
        Tensor2::from_shape_vec((1, 6), self.normalize(x).to_vec()).expect("1 x 6")
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `||z - z_hat|| / (||z_hat|| + eps)`.
pub fn sdi(z: &[f64], z_hat: &[f64], eps: f64) -> f64 {
    debug_assert_eq!(z.len(), z_hat.len());
    let diff: f64 = z.iter().zip(z_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    diff / (norm(z_hat) + eps)
}

/// Gradients of [`sdi`] with respect to `z` and `z_hat`, using zero as the
/// subgradient of a norm at the origin.
pub fn sdi_grad(z: &[f64], z_hat: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>) {
    let r: Vec<f64> = z.iter().zip(z_hat).map(|(a, b)| a - b).collect();
    let n = norm(&r);
    let m = norm(z_hat);
    let den = m + eps;
    let dz: Vec<f64> = if n > 0.0 {
        r.iter().map(|v| v / (n * den)).collect()
    } else {
        vec![0.0; z.len()]
    };
    let dzh = dz
        .iter()
        .zip(z_hat)
        .map(|(g, h)| -g - if m > 0.0 { n / (den * den) * h / m } else { 0.0 })
        .collect();
    (dz, dzh)
}

/// Squared Euclidean distance between consecutive semantic vectors.
pub fn smoothness(z_t: &[f64], z_prev: &[f64]) -> f64 {
    debug_assert_eq!(z_t.len(), z_prev.len());
    z_t.iter().zip(z_prev).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Gradient of [`smoothness`] with respect to `z_t`; the `z_prev` gradient is its negation.
pub fn smoothness_grad(z_t: &[f64], z_prev: &[f64]) -> Vec<f64> {
    z_t.iter().zip(z_prev).map(|(a, b)| 2.0 * (a - b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::s;
    use proptest::prelude::*;
    use rand::Rng;

    fn take_rows(x: &Tensor2, rows: std::ops::Range<usize>) -> Tensor2 {
        x.slice(s![rows, ..]).to_owned()
    }

    fn small() -> EncoderConfig {
        EncoderConfig {
            d_model: 16,
            n_heads: 4,
            d_ffn: 32,
            ..Default::default()
        }
    }

    fn build(cfg: EncoderConfig, seed: u64) -> (ModelParams, Encoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::new();
        let e = Encoder::new(&mut p, cfg, &mut rng).unwrap();
        (p, e)
    }

    #[test]
    fn encode_is_deterministic_in_eval() {
        let (p, e) = build(small(), 1);
        let x = Tensor2::from_shape_vec((1, 6), vec![0.5, 0.2, 0.1, 0.3, 1.0, 0.05]).unwrap();
        let a = e.encode(&p, &x).unwrap();
        assert_eq!(a, e.encode(&p, &x).unwrap());
        assert_eq!(a.len(), 3);
    }

    #[test]
    fn single_token_sees_only_position_zero() {
        let (p, e) = build(small(), 2);
        let pe = positional_encoding(5, 16);
        assert_eq!(e.pe.row(0), pe.row(0));
        assert_eq!(e.pe.nrows(), 1);
        let x = Tensor2::from_elem((4, 6), 0.3);
        let z = e.encode_batch(&p, &x).unwrap();
        for r in 1..4 {
            assert_eq!(z.row(r), z.row(0));
        }
    }

    #[test]
    fn rejects_wrong_width() {
        let (p, e) = build(small(), 3);
        assert!(e.encode(&p, &Tensor2::zeros((1, 5))).is_err());
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = EncoderConfig {
            d_model: 10,
            n_heads: 4,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn window_pooling_averages_rows() {
        let cfg = EncoderConfig { w: 3, ..small() };
        let (p, e) = build(cfg, 4);
        let x = Tensor2::from_shape_fn((6, 6), |(i, j)| ((i * 6 + j) as f64 * 0.37).sin().abs());
        let z = e.encode_batch(&p, &x).unwrap();
        assert_eq!(z.dim(), (2, 3));
        let z1 = e.encode_batch(&p, &take_rows(&x, 3..6)).unwrap();
        for (a, b) in z.row(1).iter().zip(z1.row(0).iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn local_lipschitz_bound() {
        let (p, e) = build(EncoderConfig::default(), 5);
        let x = Tensor2::from_shape_vec((1, 6), vec![0.75, 0.5, 0.2, 0.1, 1.0, 0.03]).unwrap();
        let z0 = e.encode(&p, &x).unwrap();
        // Frobenius norm of a central-difference Jacobian bounds the spectral norm.
        let h = 1e-6;
        let mut jac_f2 = 0.0;
        for j in 0..6 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[[0, j]] += h;
            xm[[0, j]] -= h;
            let zp = e.encode(&p, &xp).unwrap();
            let zm = e.encode(&p, &xm).unwrap();
            jac_f2 += zp
                .iter()
                .zip(&zm)
                .map(|(a, b)| ((a - b) / (2.0 * h)).powi(2))
                .sum::<f64>();
        }
        let l_num = jac_f2.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let dir: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let scale = 1e-6 / norm(&dir);
            let mut xe = x.clone();
            for j in 0..6 {
                xe[[0, j]] += dir[j] * scale;
            }
            let dz = norm(
                &e.encode(&p, &xe)
                    .unwrap()
                    .iter()
                    .zip(&z0)
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>(),
            );
            assert!(dz <= l_num * 1e-6 * 1.01, "{dz} vs {}", l_num * 1e-6);
        }
    }

    #[test]
    fn normalizer_scales_and_clips() {
        let n = FeatureNormalizer::new(4, 1.8);
        let x = RawState {
            idle_cores: 2.0,
            qlen_norm: 30.0,
            hol_wait: 0.9,
            aoi: 1.8,
            last_workload: 1.2,
            arrival_est: 0.05,
        };
        let v = n.normalize(&x);
        assert_eq!(v, [0.5, 10.0, 0.5, 1.0, 1.2, 0.05]);
        let back = n.denormalize(&n.normalize(&RawState { qlen_norm: 3.0, ..x }));
        assert!((back.hol_wait - 0.9).abs() < 1e-15 && back.qlen_norm == 3.0);
    }

    #[test]
    fn sdi_examples() {
        assert_eq!(sdi(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], SDI_EPS), 0.0);
        assert!((sdi(&[2.0, 0.0, 0.0], &[1.0, 0.0, 0.0], 0.0) - 1.0).abs() < 1e-15);
        assert!((sdi(&[1.0, 0.0, 0.0], &[0.0, 0.0, 0.0], 1e-8) - 1e8).abs() < 1e-6);
    }

    #[test]
    fn smoothness_examples() {
        assert_eq!(smoothness(&[0.3, 0.1], &[0.3, 0.1]), 0.0);
        assert_eq!(smoothness(&[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0]), 3.0);
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 3)
    }

    proptest! {
        #[test]
        fn sdi_nonnegative_and_zero_iff_equal(z in vec3(), zh in vec3()) {
            let v = sdi(&z, &zh, SDI_EPS);
            prop_assert!(v >= 0.0);
            prop_assert_eq!(v == 0.0, z == zh);
            prop_assert_eq!(sdi(&z, &z, SDI_EPS), 0.0);
        }

        #[test]
        fn sdi_scale_equivariance(z in vec3(), zh in vec3(), c in 1e-3f64..1e3) {
            let cz: Vec<f64> = z.iter().map(|v| c * v).collect();
            let czh: Vec<f64> = zh.iter().map(|v| c * v).collect();
            let a = sdi(&z, &zh, 0.0);
            let b = sdi(&cz, &czh, 0.0);
            prop_assume!(norm(&zh) > 0.0);
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            if norm(&zh) >= 1e-3 && norm(&czh) >= 1e-3 {
                let a = sdi(&z, &zh, SDI_EPS);
                let b = sdi(&cz, &czh, SDI_EPS);
                prop_assert!((a - b).abs() <= 1e-6 * a.max(b).max(1e-300));
            }
        }

        #[test]
        fn smoothness_is_symmetric(a in vec3(), b in vec3()) {
            prop_assert_eq!(smoothness(&a, &b), smoothness(&b, &a));
        }

        #[test]
        fn sdi_grad_matches_differences(z in vec3(), zh in vec3()) {
            prop_assume!(norm(&zh) > 0.1);
            prop_assume!(z.iter().zip(&zh).map(|(a, b)| (a - b).abs()).sum::<f64>() > 0.1);
            let (gz, gzh) = sdi_grad(&z, &zh, SDI_EPS);
            let h = 1e-6;
            for i in 0..3 {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[i] += h;
                zm[i] -= h;
                let n = (sdi(&zp, &zh, SDI_EPS) - sdi(&zm, &zh, SDI_EPS)) / (2.0 * h);
                prop_assert!((n - gz[i]).abs() < 1e-6 * (1.0 + n.abs()));
                let mut hp = zh.clone();
                let mut hm = zh.clone();
                hp[i] += h;
                hm[i] -= h;
                let n = (sdi(&z, &hp, SDI_EPS) - sdi(&z, &hm, SDI_EPS)) / (2.0 * h);
                prop_assert!((n - gzh[i]).abs() < 1e-6 * (1.0 + n.abs()));
            }
        }
    }
}

use ndarray::{linalg::general_mat_mul, Array2, Axis, Zip};
use rand::Rng;

use crate::{shape_err, xavier_uniform, ModelParams, ParamId, Result, Tensor2};

/// Affine map `y = x W + b` with `W: in x out` and `b: 1 x out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Registers `{prefix}.w` (Xavier-uniform) and `{prefix}.b` (zeros).
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = params.add(format!("{prefix}.w"), xavier_uniform(d_in, d_out, rng))?;
        let b = params.add(format!("{prefix}.b"), Array2::zeros((1, d_out)))?;
        Ok(Self {
            w,
            b: Some(b),
            d_in,
            d_out,
        })
    }

    /// Weight-only map `y = x W`.
    pub fn without_bias<R: Rng + ?Sized>(
        params: &mut ModelParams,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = params.add(format!("{prefix}.w"), xavier_uniform(d_in, d_out, rng))?;
        Ok(Self {
            w,
            b: None,
            d_in,
            d_out,
        })
    }

    pub fn forward(&self, params: &ModelParams, x: &Tensor2) -> Result<Tensor2> {
        if x.ncols() != self.d_in {
            return Err(shape_err(
                "linear",
                format!("* x {}", self.d_in),
                format!("{:?}", x.dim()),
            ));
        }
        let mut y = x.dot(params.value(self.w));
        if let Some(b) = self.b {
            y += params.value(b);
        }
        Ok(y)
    }

    /// Accumulates `dW += x^T dy`, `db += sum_rows(dy)` and returns `dy W^T`.
    pub fn backward(&self, params: &mut ModelParams, x: &Tensor2, dy: &Tensor2) -> Tensor2 {
        self.backward_params(params, x, dy);
        dy.dot(&params.value(self.w).t())
    }

    /// Gradient accumulation only; skips the input gradient.
    pub fn backward_params(&self, params: &mut ModelParams, x: &Tensor2, dy: &Tensor2) {
        general_mat_mul(1.0, &x.t(), dy, 1.0, params.grad_mut(self.w));
        if let Some(b) = self.b {
            *params.grad_mut(b) += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
    }
}

/// Row-wise layer normalisation with learnable gain and bias.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Tensor2,
    inv_std: Vec<f64>,
}

impl LayerNormCache {
    /// The pre-affine normalised input.
    pub fn normalized(&self) -> &Tensor2 {
        &self.xhat
    }
}

impl LayerNorm {
    pub const DEFAULT_EPS: f64 = 1e-9;

    pub fn new(params: &mut ModelParams, prefix: &str, dim: usize) -> Result<Self> {
        let gamma = params.add(format!("{prefix}.gamma"), Array2::ones((1, dim)))?;
        let beta = params.add(format!("{prefix}.beta"), Array2::zeros((1, dim)))?;
        Ok(Self {
            gamma,
            beta,
            dim,
            eps: Self::DEFAULT_EPS,
        })
    }

    pub fn forward(&self, params: &ModelParams, x: &Tensor2) -> Result<(Tensor2, LayerNormCache)> {
        if x.ncols() != self.dim {
            return Err(shape_err(
                "layernorm",
                format!("* x {}", self.dim),
                format!("{:?}", x.dim()),
            ));
        }
        let n = self.dim as f64;
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in xhat.axis_iter_mut(Axis(0)) {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            let inv = 1.0 / (var + self.eps).sqrt();
            row.mapv_inplace(|v| v * inv);
            inv_std.push(inv);
        }
        let y = &xhat * params.value(self.gamma) + params.value(self.beta);
        Ok((y, LayerNormCache { xhat, inv_std }))
    }

    pub fn backward(&self, params: &mut ModelParams, cache: &LayerNormCache, dy: &Tensor2) -> Tensor2 {
        *params.grad_mut(self.gamma) += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        *params.grad_mut(self.beta) += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = dy * params.value(self.gamma);
        let n = self.dim as f64;
        let mut dx = Tensor2::zeros(dy.raw_dim());
        for (((mut d, g), xh), &inv) in dx
            .axis_iter_mut(Axis(0))
            .zip(dxhat.axis_iter(Axis(0)))
            .zip(cache.xhat.axis_iter(Axis(0)))
            .zip(cache.inv_std.iter())
        {
            let sum_g = g.sum();
            let sum_gx: f64 = g.iter().zip(xh.iter()).map(|(a, b)| a * b).sum();
            Zip::from(&mut d)
                .and(&g)
                .and(&xh)
                .for_each(|o, &gi, &xi| *o = inv / n * (n * gi - sum_g - xi * sum_gx));
        }
        dx
    }
}

/// Inverted dropout. Identity in evaluation mode.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub p: f64,
}

/// Scaled keep-mask recorded by a training-mode forward pass; `None` means
/// the pass was the identity.
#[derive(Debug, Clone)]
pub struct DropoutMask(Option<Tensor2>);

impl Dropout {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0, 1)");
        Self { p }
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: &Tensor2, train: bool, rng: &mut R) -> (Tensor2, DropoutMask) {
        if !train || self.p == 0.0 {
            return (x.clone(), DropoutMask(None));
        }
        let scale = 1.0 / (1.0 - self.p);
        let mask = Tensor2::from_shape_fn(x.raw_dim(), |_| if rng.random::<f64>() < self.p { 0.0 } else { scale });
        (x * &mask, DropoutMask(Some(mask)))
    }

    pub fn backward(&self, mask: &DropoutMask, dy: &Tensor2) -> Tensor2 {
        match &mask.0 {
            Some(m) => dy * m,
            None => dy.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ModelParams::new();
        let lin = Linear::new(&mut p, "l", 3, 2, &mut rng).unwrap();
        assert!(lin.forward(&p, &Tensor2::zeros((1, 4))).is_err());
        assert_eq!(lin.forward(&p, &Tensor2::zeros((5, 3))).unwrap().dim(), (5, 2));
    }

    #[test]
    fn layernorm_of_constant_row_is_zero() {
        let mut p = ModelParams::new();
        let ln = LayerNorm::new(&mut p, "ln", 4).unwrap();
        let (y, _) = ln.forward(&p, &array![[3.0, 3.0, 3.0, 3.0]]).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = array![[1.0, -2.0, 3.5]];
        let (y, _) = Dropout::new(0.1).forward(&x, false, &mut rng);
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_train_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor2::ones((1, 100_000));
        let (y, _) = Dropout::new(0.1).forward(&x, true, &mut rng);
        let mean = y.mean().unwrap();
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    proptest! {
        #[test]
        fn layernorm_moments(v in proptest::collection::vec(-100.0f64..100.0, 16)) {
            let x = Tensor2::from_shape_vec((2, 8), v).unwrap();
            prop_assume!(x.axis_iter(Axis(0)).all(|r| {
                let m = r.mean().unwrap();
                r.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 8.0 > 1.0
            }));
            let mut p = ModelParams::new();
            let ln = LayerNorm::new(&mut p, "ln", 8).unwrap();
            let (_, cache) = ln.forward(&p, &x).unwrap();
            for row in cache.normalized().axis_iter(Axis(0)) {
                let m = row.mean().unwrap();
                let var = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 8.0;
                prop_assert!(m.abs() < 1e-10);
                prop_assert!((var - 1.0).abs() < 1e-8);
            }
        }
    }
}

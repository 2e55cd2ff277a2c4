use ndarray::s;
use rand::Rng;

use crate::{shape_err, softmax_rows, softmax_rows_backward, Linear, ModelParams, NnError, Result, Tensor2};

/// Multi-head scaled dot-product self-attention over a batch of sequences.
///
/// Inputs are laid out as `(batch * seq_len) x d_model`, with the rows of one
/// sequence contiguous. Attention never crosses sequence boundaries.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadSelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub n_heads: usize,
    pub d_model: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Tensor2,
    seq_len: usize,
    /// `None` on the single-token path, where attention weights are exactly 1.
    full: Option<FullCache>,
    concat: Tensor2,
}

#[derive(Debug, Clone)]
struct FullCache {
    q: Tensor2,
    k: Tensor2,
    v: Tensor2,
    /// Attention weights, indexed `[seq * n_heads + head]`.
    weights: Vec<Tensor2>,
}

impl MultiHeadSelfAttention {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        prefix: &str,
        d_model: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(NnError::Config(format!(
                "d_model {d_model} not divisible by n_heads {n_heads}"
            )));
        }
        Ok(Self {
            q: Linear::new(params, &format!("{prefix}.q"), d_model, d_model, rng)?,
            // a key bias shifts every score in a row equally and never reaches the output
            k: Linear::without_bias(params, &format!("{prefix}.k"), d_model, d_model, rng)?,
            v: Linear::new(params, &format!("{prefix}.v"), d_model, d_model, rng)?,
            o: Linear::new(params, &format!("{prefix}.o"), d_model, d_model, rng)?,
            n_heads,
            d_model,
        })
    }

    fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn forward(&self, params: &ModelParams, x: &Tensor2, seq_len: usize) -> Result<(Tensor2, AttentionCache)> {
        self.forward_impl(params, x, seq_len, seq_len == 1)
    }

    /// Forward pass that always materialises the attention weights, even for
    /// single-token sequences.
    pub fn forward_full(&self, params: &ModelParams, x: &Tensor2, seq_len: usize) -> Result<(Tensor2, AttentionCache)> {
        self.forward_impl(params, x, seq_len, false)
    }

    fn forward_impl(
        &self,
        params: &ModelParams,
        x: &Tensor2,
        seq_len: usize,
        single_token: bool,
    ) -> Result<(Tensor2, AttentionCache)> {
        if seq_len == 0 || !x.nrows().is_multiple_of(seq_len) {
            return Err(shape_err("msa", format!("rows multiple of {seq_len}"), x.nrows()));
        }
        if single_token {
            // softmax over one key is exactly 1, so each head returns its value row
            let concat = self.v.forward(params, x)?;
            let y = self.o.forward(params, &concat)?;
            return Ok((
                y,
                AttentionCache {
                    x: x.clone(),
                    seq_len,
                    full: None,
                    concat,
                },
            ));
        }
        let q = self.q.forward(params, x)?;
        let k = self.k.forward(params, x)?;
        let v = self.v.forward(params, x)?;
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let n_seq = x.nrows() / seq_len;
        let mut concat = Tensor2::zeros(x.raw_dim());
        let mut weights = Vec::with_capacity(n_seq * self.n_heads);
        for b in 0..n_seq {
            let rows = b * seq_len..(b + 1) * seq_len;
            for h in 0..self.n_heads {
                let cols = h * dh..(h + 1) * dh;
                let qb = q.slice(s![rows.clone(), cols.clone()]);
                let kb = k.slice(s![rows.clone(), cols.clone()]);
                let vb = v.slice(s![rows.clone(), cols.clone()]);
                let scores = qb.dot(&kb.t()) * scale;
                let a = softmax_rows(&scores);
                concat.slice_mut(s![rows.clone(), cols]).assign(&a.dot(&vb));
                weights.push(a);
            }
        }
        let y = self.o.forward(params, &concat)?;
        Ok((
            y,
            AttentionCache {
                x: x.clone(),
                seq_len,
                full: Some(FullCache { q, k, v, weights }),
                concat,
            },
        ))
    }

    pub fn backward(&self, params: &mut ModelParams, cache: &AttentionCache, dy: &Tensor2) -> Tensor2 {
        let dconcat = self.o.backward(params, &cache.concat, dy);
        let Some(full) = &cache.full else {
            // q and k do not influence the output on the single-token path
            return self.v.backward(params, &cache.x, &dconcat);
        };
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let seq_len = cache.seq_len;
        let n_seq = cache.x.nrows() / seq_len;
        let mut dq = Tensor2::zeros(cache.x.raw_dim());
        let mut dk = Tensor2::zeros(cache.x.raw_dim());
        let mut dv = Tensor2::zeros(cache.x.raw_dim());
        for b in 0..n_seq {
            let rows = b * seq_len..(b + 1) * seq_len;
            for h in 0..self.n_heads {
                let cols = h * dh..(h + 1) * dh;
                let a = &full.weights[b * self.n_heads + h];
                let dout = dconcat.slice(s![rows.clone(), cols.clone()]);
                let vb = full.v.slice(s![rows.clone(), cols.clone()]);
                let qb = full.q.slice(s![rows.clone(), cols.clone()]);
                let kb = full.k.slice(s![rows.clone(), cols.clone()]);
                let da = dout.dot(&vb.t());
                dv.slice_mut(s![rows.clone(), cols.clone()]).assign(&a.t().dot(&dout));
                let ds = softmax_rows_backward(a, &da) * scale;
                dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&ds.dot(&kb));
                dk.slice_mut(s![rows.clone(), cols]).assign(&ds.t().dot(&qb));
            }
        }
        let mut dx = self.q.backward(params, &cache.x, &dq);
        dx += &self.k.backward(params, &cache.x, &dk);
        dx += &self.v.backward(params, &cache.x, &dv);
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (ModelParams, MultiHeadSelfAttention, Tensor2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::new();
        let msa = MultiHeadSelfAttention::new(&mut p, "msa", 8, 2, &mut rng).unwrap();
        let x = Tensor2::from_shape_fn((5, 8), |_| rng.random_range(-1.0..1.0));
        (p, msa, x)
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ModelParams::new();
        assert!(MultiHeadSelfAttention::new(&mut p, "m", 6, 4, &mut rng).is_err());
    }

    #[test]
    fn single_token_reduces_to_value_output_projection() {
        let (mut p, msa, x) = setup(4);
        let (fast, fast_cache) = msa.forward(&p, &x, 1).unwrap();
        let (full, full_cache) = msa.forward_full(&p, &x, 1).unwrap();
        let expected = msa.o.forward(&p, &msa.v.forward(&p, &x).unwrap()).unwrap();
        for ((a, b), c) in fast.iter().zip(full.iter()).zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12 && (a - c).abs() < 1e-12);
        }
        for w in &full_cache.full.as_ref().unwrap().weights {
            assert!(w.iter().all(|v| *v == 1.0));
        }

        let dy = Tensor2::from_shape_fn(fast.raw_dim(), |(i, j)| ((i * 3 + j) as f64).sin());
        p.zero_grad();
        let dx_fast = msa.backward(&mut p, &fast_cache, &dy);
        let g_fast: Vec<Tensor2> = p.ids().map(|id| p.grad(id).clone()).collect();
        p.zero_grad();
        let dx_full = msa.backward(&mut p, &full_cache, &dy);
        for (a, b) in dx_fast.iter().zip(dx_full.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (id, g) in p.ids().zip(g_fast) {
            for (a, b) in g.iter().zip(p.grad(id).iter()) {
                assert!((a - b).abs() < 1e-12, "{}", p.name(id));
            }
        }
    }

    #[test]
    fn rejects_ragged_batch() {
        let (p, msa, x) = setup(1);
        assert!(msa.forward(&p, &x, 2).is_err());
    }
}

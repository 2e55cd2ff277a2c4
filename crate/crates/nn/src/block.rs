use rand::Rng;

use crate::{
    gelu, gelu_backward, AttentionCache, Dropout, DropoutMask, LayerNorm, LayerNormCache, Linear, ModelParams,
    MultiHeadSelfAttention, Result, Tensor2,
};

/// Two-layer position-wise feed-forward network with GeLU.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache {
    x: Tensor2,
    pre: Tensor2,
    act: Tensor2,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        prefix: &str,
        d_model: usize,
        d_ffn: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            up: Linear::new(params, &format!("{prefix}.up"), d_model, d_ffn, rng)?,
            down: Linear::new(params, &format!("{prefix}.down"), d_ffn, d_model, rng)?,
        })
    }

    pub fn forward(&self, params: &ModelParams, x: &Tensor2) -> Result<(Tensor2, FeedForwardCache)> {
        let pre = self.up.forward(params, x)?;
        let act = gelu(&pre);
        let y = self.down.forward(params, &act)?;
        Ok((y, FeedForwardCache { x: x.clone(), pre, act }))
    }

    pub fn backward(&self, params: &mut ModelParams, cache: &FeedForwardCache, dy: &Tensor2) -> Tensor2 {
        let dact = self.down.backward(params, &cache.act, dy);
        let dpre = gelu_backward(&cache.pre, &dact);
        self.up.backward(params, &cache.x, &dpre)
    }
}

/// Pre-LN transformer encoder block:
/// `H' = MSA(LN(H)) + H`, `H_out = FFN(LN(H')) + H'`, with dropout on both
/// residual branches.
#[derive(Debug, Clone, Copy)]
pub struct EncoderBlock {
    pub ln_attn: LayerNorm,
    pub attn: MultiHeadSelfAttention,
    pub ln_ffn: LayerNorm,
    pub ffn: FeedForward,
    pub dropout: Dropout,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    ln_attn: LayerNormCache,
    attn: AttentionCache,
    drop_attn: DropoutMask,
    ln_ffn: LayerNormCache,
    ffn: FeedForwardCache,
    drop_ffn: DropoutMask,
}

impl EncoderBlock {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        prefix: &str,
        d_model: usize,
        n_heads: usize,
        d_ffn: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            ln_attn: LayerNorm::new(params, &format!("{prefix}.ln1"), d_model)?,
            attn: MultiHeadSelfAttention::new(params, &format!("{prefix}.msa"), d_model, n_heads, rng)?,
            ln_ffn: LayerNorm::new(params, &format!("{prefix}.ln2"), d_model)?,
            ffn: FeedForward::new(params, &format!("{prefix}.ffn"), d_model, d_ffn, rng)?,
            dropout: Dropout::new(dropout),
        })
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        params: &ModelParams,
        h: &Tensor2,
        seq_len: usize,
        train: bool,
        rng: &mut R,
    ) -> Result<(Tensor2, BlockCache)> {
        let (a, ln_attn) = self.ln_attn.forward(params, h)?;
        let (m, attn) = self.attn.forward(params, &a, seq_len)?;
        let (m, drop_attn) = self.dropout.forward(&m, train, rng);
        let h1 = m + h;
        let (b, ln_ffn) = self.ln_ffn.forward(params, &h1)?;
        let (f, ffn) = self.ffn.forward(params, &b)?;
        let (f, drop_ffn) = self.dropout.forward(&f, train, rng);
        let out = f + &h1;
        Ok((
            out,
            BlockCache {
                ln_attn,
                attn,
                drop_attn,
                ln_ffn,
                ffn,
                drop_ffn,
            },
        ))
    }

    pub fn backward(&self, params: &mut ModelParams, cache: &BlockCache, dout: &Tensor2) -> Tensor2 {
        let df = self.dropout.backward(&cache.drop_ffn, dout);
        let db = self.ffn.backward(params, &cache.ffn, &df);
        let dh1 = self.ln_ffn.backward(params, &cache.ln_ffn, &db) + dout;
        let dm = self.dropout.backward(&cache.drop_attn, &dh1);
        let da = self.attn.backward(params, &cache.attn, &dm);
        self.ln_attn.backward(params, &cache.ln_attn, &da) + &dh1
    }
}

/// Sinusoidal positional encoding table, `seq_len x d_model`.
pub fn positional_encoding(seq_len: usize, d_model: usize) -> Tensor2 {
    Tensor2::from_shape_fn((seq_len, d_model), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d_model as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

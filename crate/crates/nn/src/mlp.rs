use rand::Rng;

use crate::{gelu, gelu_backward, Linear, ModelParams, NnError, Result, Tensor2};

/// Multilayer perceptron with GeLU between layers and a linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each linear layer.
    inputs: Vec<Tensor2>,
    /// Pre-activation output of each hidden layer.
    pre: Vec<Tensor2>,
}

impl Mlp {
    /// `sizes` lists every width including input and output, e.g. `[5, 64, 64, 1]`.
    pub fn new<R: Rng + ?Sized>(params: &mut ModelParams, prefix: &str, sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(NnError::Config("mlp needs at least input and output widths".into()));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(params, &format!("{prefix}.l{i}"), w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in
    }

    pub fn output_layer(&self) -> &Linear {
        self.layers.last().expect("mlp has layers")
    }

    pub fn forward(&self, params: &ModelParams, x: &Tensor2) -> Result<(Tensor2, MlpCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(params, &h)?;
            inputs.push(h);
            if i + 1 < self.layers.len() {
                h = gelu(&y);
                pre.push(y);
            } else {
                h = y;
            }
        }
        Ok((h, MlpCache { inputs, pre }))
    }

    pub fn backward(&self, params: &mut ModelParams, cache: &MlpCache, dy: &Tensor2) -> Tensor2 {
        let mut g = dy.clone();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                g = gelu_backward(&cache.pre[i], &g);
            }
            g = self.layers[i].backward(params, &cache.inputs[i], &g);
        }
        g
    }
}

//! Minimal dense neural network building blocks with exact, hand-written
//! backward passes.
//!
//! Every layer follows the same protocol: `forward` takes the parameter store
//! by shared reference and returns the output together with a cache of the
//! intermediates that `backward` needs; `backward` takes the store mutably,
//! accumulates parameter gradients into it and returns the gradient with
//! respect to the layer input. All arithmetic is `f64`.

mod activation;
mod attention;
mod block;
mod gradcheck;
mod layers;
mod loss;
mod mlp;
mod optim;
mod params;

pub use activation::{gelu, gelu_backward, sigmoid, sigmoid_backward, softmax_rows, softmax_rows_backward};
pub use attention::{AttentionCache, MultiHeadSelfAttention};
pub use block::{positional_encoding, BlockCache, EncoderBlock, FeedForward, FeedForwardCache};
pub use gradcheck::{grad_check, grad_check_five_point, GradCheckReport, FD_STEP};
pub use layers::{Dropout, DropoutMask, LayerNorm, LayerNormCache, Linear};
pub use loss::bce_with_logit;
pub use mlp::{Mlp, MlpCache};
pub use optim::{Adam, AdamConfig};
pub use params::{xavier_uniform, ModelParams, ParamId, PARAM_FILE_MAGIC, PARAM_FILE_VERSION};

use thiserror::Error;

/// Row-major 2-D tensor of 64-bit floats.
pub type Tensor2 = ndarray::Array2<f64>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed parameter file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

pub(crate) fn shape_err(op: &'static str, expected: impl ToString, got: impl ToString) -> NnError {
    NnError::Shape {
        op,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}

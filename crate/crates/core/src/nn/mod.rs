//! Neural building blocks: linear maps, MLPs, layer norm, dropout,
//! multi-head attention, a transformer encoder stack, and Adam.

mod adam;
mod attention;

pub use adam::{clip_grad_norm, AdamConfig, AdamState};
pub use attention::{
    causal_mask, sinusoidal_positions, AttentionHead, EncoderBlock, EncoderConfig, MultiHeadAttention,
    TransformerEncoder,
};

use rand::Rng as _;
use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric-domain error: non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Ordered, named parameter list. Names are dotted paths such as
/// `encoder.blocks.0.attn.heads.1.query.weight`.
pub type NamedParams = Vec<(String, Tensor)>;

pub trait Module {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams);

    fn named_params(&self, prefix: &str) -> NamedParams {
        let mut out = Vec::new();
        self.collect_params(prefix, &mut out);
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Uniform Glorot init in `±sqrt(6 / (fan_in + fan_out))`.
fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect()
}

/// `y = x · W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Result<Self> {
        if fan_in == 0 || fan_out == 0 {
            return Err(NnError::Config(format!("linear layer {fan_in} -> {fan_out}")));
        }
        Ok(Linear {
            weight: Tensor::param(glorot(rng, fan_in, fan_out), &[fan_in, fan_out])?,
            bias: Tensor::param(vec![0.0; fan_out], &[fan_out])?,
        })
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (w, b) = (weight.shape(), bias.shape());
        if w.len() != 2 || b.len() != 1 || w[1] != b[0] {
            return Err(NnError::Config(format!("weight {w:?} incompatible with bias {b:?}")));
        }
        Ok(Linear { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().last() != Some(&self.in_dim()) {
            return Err(NnError::Config(format!(
                "linear layer expects last axis {}, got input {:?}",
                self.in_dim(),
                x.shape()
            )));
        }
        if x.ndim() == 1 {
            let x2 = x.reshape(&[1, self.in_dim()])?;
            return Ok(x2.matmul(&self.weight)?.add(&self.bias)?.reshape(&[self.out_dim()])?);
        }
        Ok(x.matmul(&self.weight)?.add(&self.bias)?)
    }

    /// Forward pass with parameters cut from the graph.
    pub fn forward_frozen(&self, x: &Tensor) -> Result<Tensor> {
        Linear {
            weight: self.weight.detach(),
            bias: self.bias.detach(),
        }
        .forward(x)
    }
}

impl Module for Linear {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

/// Alternating linear + ReLU, linear output layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new(rng: &mut Rng, dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(NnError::Config(format!("mlp needs at least two dims, got {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| Linear::new(rng, w[0], w[1]))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers })
    }

    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(NnError::Config("mlp with no layers".into()));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(NnError::Config(format!(
                    "layer chain mismatch: {} -> {}",
                    w[0].out_dim(),
                    w[1].in_dim()
                )));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x, false)
    }

    pub fn forward_frozen(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x, true)
    }

    fn run(&self, x: &Tensor, frozen: bool) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = if frozen {
                layer.forward_frozen(&h)?
            } else {
                layer.forward(&h)?
            };
            if i < last {
                h = h.relu();
            }
        }
        Ok(h)
    }
}

impl Module for Mlp {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams) {
        for (i, l) in self.layers.iter().enumerate() {
            l.collect_params(&join(prefix, &format!("layers.{i}")), out);
        }
    }
}

/// Layer normalization over the last axis with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: Tensor::param(vec![1.0; dim], &[dim])?,
            bias: Tensor::param(vec![0.0; dim], &[dim])?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        layer_norm(x, &self.gain, &self.bias, self.eps)
    }
}

impl Module for LayerNorm {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams) {
        out.push((join(prefix, "gain"), self.gain.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    if eps <= 0.0 {
        return Err(NnError::Config(format!("layer norm eps must be positive, got {eps}")));
    }
    Ok(x.normalize_last(eps)?.mul(gain)?.add(bias)?)
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)`. Identity in eval mode.
pub fn dropout(x: &Tensor, rate: f64, training: bool, rng: &mut Rng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..x.numel())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Ok(x.mul(&Tensor::new(mask, x.shape())?)?)
}

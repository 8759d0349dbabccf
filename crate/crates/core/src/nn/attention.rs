use serde::{Deserialize, Serialize};

use super::{dropout, join, LayerNorm, Linear, Module, NamedParams, NnError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// One attention head: `softmax(Q Kᵀ / sqrt(d_qkv)) V`.
#[derive(Debug, Clone)]
pub struct AttentionHead {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub d_qkv: usize,
}

impl AttentionHead {
    pub fn new(rng: &mut Rng, model_dim: usize, d_qkv: usize) -> Result<Self> {
        Ok(AttentionHead {
            query: Linear::new(rng, model_dim, d_qkv)?,
            key: Linear::new(rng, model_dim, d_qkv)?,
            value: Linear::new(rng, model_dim, d_qkv)?,
            d_qkv,
        })
    }

    /// `x: [batch, time, dim]` → (output `[batch, time, d_qkv]`, weights `[batch, time, time]`).
    pub fn forward(&self, x: &Tensor, mask: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let q = self.query.forward(x)?;
        let k = self.key.forward(x)?;
        let v = self.value.forward(x)?;
        let mut scores = q.matmul(&k.transpose(1, 2)?)?.scale(1.0 / (self.d_qkv as f64).sqrt());
        if let Some(m) = mask {
            scores = scores.add(m)?;
        }
        let weights = scores.softmax(2)?;
        Ok((weights.matmul(&v)?, weights))
    }
}

impl Module for AttentionHead {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams) {
        self.query.collect_params(&join(prefix, "query"), out);
        self.key.collect_params(&join(prefix, "key"), out);
        self.value.collect_params(&join(prefix, "value"), out);
    }
}

/// `[time, time]` additive mask: 0 on and below the diagonal, `-inf` above.
pub fn causal_mask(time: usize) -> Tensor {
    let mut m = vec![0.0; time * time];
    for i in 0..time {
        for j in i + 1..time {
            m[i * time + j] = f64::NEG_INFINITY;
        }
    }
    Tensor::new(m, &[time, time]).expect("positive time")
}

/// Concatenated heads followed by an output projection.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub heads: Vec<AttentionHead>,
    pub output: Linear,
}

impl MultiHeadAttention {
    pub fn new(rng: &mut Rng, model_dim: usize, n_heads: usize) -> Result<Self> {
        if n_heads == 0 || !model_dim.is_multiple_of(n_heads) {
            return Err(NnError::Config(format!(
                "model dim {model_dim} is not divisible into {n_heads} heads"
            )));
        }
        let d_qkv = model_dim / n_heads;
        let heads = (0..n_heads)
            .map(|_| AttentionHead::new(rng, model_dim, d_qkv))
            .collect::<Result<_>>()?;
        Ok(MultiHeadAttention {
            heads,
            output: Linear::new(rng, model_dim, model_dim)?,
        })
    }

    pub fn model_dim(&self) -> usize {
        self.output.in_dim()
    }

    pub fn forward(&self, x: &Tensor, causal: bool) -> Result<Tensor> {
        Ok(self.forward_with_weights(x, causal)?.0)
    }

    /// Also returns each head's attention weights.
    pub fn forward_with_weights(&self, x: &Tensor, causal: bool) -> Result<(Tensor, Vec<Tensor>)> {
        let dims = x.shape();
        if dims.len() != 3 || dims[2] != self.model_dim() {
            return Err(NnError::Config(format!(
                "attention expects [batch, time, {}], got {dims:?}",
                self.model_dim()
            )));
        }
        let mask = causal.then(|| causal_mask(dims[1]));
        let mut outs = Vec::with_capacity(self.heads.len());
        let mut weights = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            let (o, w) = h.forward(x, mask.as_ref())?;
            outs.push(o);
            weights.push(w);
        }
        let cat = Tensor::concat(&outs, 2)?;
        Ok((self.output.forward(&cat)?, weights))
    }
}

impl Module for MultiHeadAttention {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams) {
        for (i, h) in self.heads.iter().enumerate() {
            h.collect_params(&join(prefix, &format!("heads.{i}")), out);
        }
        self.output.collect_params(&join(prefix, "output"), out);
    }
}

/// Post-norm block: `LN(x + MHA(x))`, then `LN(h + FF(h))`.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNorm,
    pub dropout: f64,
}

impl EncoderBlock {
    pub fn new(rng: &mut Rng, model_dim: usize, n_heads: usize, ff_dim: usize, dropout: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(NnError::Config(format!("dropout rate {dropout} outside [0, 1)")));
        }
        Ok(EncoderBlock {
            attn: MultiHeadAttention::new(rng, model_dim, n_heads)?,
            norm1: LayerNorm::new(model_dim)?,
            ff1: Linear::new(rng, model_dim, ff_dim)?,
            ff2: Linear::new(rng, ff_dim, model_dim)?,
            norm2: LayerNorm::new(model_dim)?,
            dropout,
        })
    }

    pub fn forward(&self, x: &Tensor, causal: bool, training: bool, rng: &mut Rng) -> Result<Tensor> {
        let a = dropout(&self.attn.forward(x, causal)?, self.dropout, training, rng)?;
        let h = self.norm1.forward(&x.add(&a)?)?;
        let f = self.ff2.forward(&self.ff1.forward(&h)?.relu())?;
        let f = dropout(&f, self.dropout, training, rng)?;
        self.norm2.forward(&h.add(&f)?)
    }
}

impl Module for EncoderBlock {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams) {
        self.attn.collect_params(&join(prefix, "attn"), out);
        self.norm1.collect_params(&join(prefix, "norm1"), out);
        self.ff1.collect_params(&join(prefix, "ff1"), out);
        self.ff2.collect_params(&join(prefix, "ff2"), out);
        self.norm2.collect_params(&join(prefix, "norm2"), out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub layers: usize,
    pub dropout: f64,
    pub causal: bool,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.model_dim == 0 || self.ff_dim == 0 || self.layers == 0 {
            return Err(NnError::Config(format!("zero-sized encoder: {self:?}")));
        }
        if self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return Err(NnError::Config(format!(
                "model dim {} is not divisible into {} heads",
                self.model_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnError::Config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// `[time, dim]` sinusoidal position table.
pub fn sinusoidal_positions(time: usize, dim: usize) -> Tensor {
    let mut pe = vec![0.0; time * dim];
    for pos in 0..time {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            pe[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(pe, &[time, dim]).expect("positive dims")
}

/// Input projection plus additive sinusoidal positions, then encoder blocks.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub config: EncoderConfig,
    pub input: Linear,
    pub blocks: Vec<EncoderBlock>,
}

impl TransformerEncoder {
    pub fn new(rng: &mut Rng, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let input = Linear::new(rng, config.input_dim, config.model_dim)?;
        let blocks = (0..config.layers)
            .map(|_| EncoderBlock::new(rng, config.model_dim, config.heads, config.ff_dim, config.dropout))
            .collect::<Result<_>>()?;
        Ok(TransformerEncoder { config, input, blocks })
    }

    /// `x: [batch, time, input_dim]` → `[batch, time, model_dim]`.
    pub fn forward(&self, x: &Tensor, training: bool, rng: &mut Rng) -> Result<Tensor> {
        let dims = x.shape();
        if dims.len() != 3 || dims[2] != self.config.input_dim {
            return Err(NnError::Config(format!(
                "encoder expects [batch, time, {}], got {dims:?}",
                self.config.input_dim
            )));
        }
        let pe = sinusoidal_positions(dims[1], self.config.model_dim);
        let mut h = self.input.forward(x)?.add(&pe)?;
        h = dropout(&h, self.config.dropout, training, rng)?;
        for b in &self.blocks {
            h = b.forward(&h, self.config.causal, training, rng)?;
        }
        Ok(h)
    }
}

impl Module for TransformerEncoder {
    fn collect_params(&self, prefix: &str, out: &mut NamedParams) {
        self.input.collect_params(&join(prefix, "input"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect_params(&join(prefix, &format!("blocks.{i}")), out);
        }
    }
}

//! Multi-head attention and pre-norm transformer blocks.

use candle_core::{Device, Tensor};

use super::layers::{FeedForward, LayerNorm, Linear};
use super::ops::softmax_last;
use super::params::Builder;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    d_model: usize,
}

impl MultiHeadAttention {
    pub fn new(pb: &Builder, d_q: usize, d_kv: usize, d_model: usize, heads: usize, d_out: usize) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::config(format!("width {d_model} not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(&pb.sub("q"), d_q, d_model)?,
            k: Linear::new(&pb.sub("k"), d_kv, d_model)?,
            v: Linear::new(&pb.sub("v"), d_kv, d_model)?,
            o: Linear::new(&pb.sub("o"), d_model, d_out)?,
            heads,
            d_model,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    fn split(&self, x: &Tensor) -> Result<Tensor> {
        let (b, l, _) = x.dims3()?;
        Ok(x.reshape((b, l, self.heads, self.d_model / self.heads))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    /// Returns the output `(B, Lq, d_out)` and the attention weights
    /// `(B, heads, Lq, Lk)`.
    pub fn forward(&self, q_in: &Tensor, kv_in: &Tensor, causal: bool) -> Result<(Tensor, Tensor)> {
        let (b, lq, _) = q_in.dims3()?;
        let (bk, lk, _) = kv_in.dims3()?;
        if b != bk {
            return Err(Error::shape(format!("query batch {b} vs key batch {bk}")));
        }
        let q = self.split(&self.q.forward(q_in)?)?;
        let k = self.split(&self.k.forward(kv_in)?)?;
        let v = self.split(&self.v.forward(kv_in)?)?;
        let scale = 1.0 / ((self.d_model / self.heads) as f64).sqrt();
        let mut scores = (q.matmul(&k.t()?.contiguous()?)? * scale)?;
        if causal {
            let mask: Vec<f64> = (0..lq)
                .flat_map(|i| (0..lk).map(move |j| if j > i { -1e9 } else { 0.0 }))
                .collect();
            let mask = Tensor::from_vec(mask, (lq, lk), &Device::Cpu)?.to_dtype(scores.dtype())?;
            scores = scores.broadcast_add(&mask)?;
        }
        let probs = softmax_last(&scores)?;
        let ctx = probs
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, lq, self.d_model))?;
        Ok((self.o.forward(&ctx)?, probs))
    }
}

/// Pre-norm self-attention block.
#[derive(Debug, Clone)]
pub struct SelfBlock {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ffn: FeedForward,
}

impl SelfBlock {
    pub fn new(pb: &Builder, dim: usize, heads: usize, ffn_mult: usize) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(&pb.sub("ln1"), dim)?,
            attn: MultiHeadAttention::new(&pb.sub("attn"), dim, dim, dim, heads, dim)?,
            ln2: LayerNorm::new(&pb.sub("ln2"), dim)?,
            ffn: FeedForward::new(&pb.sub("ffn"), dim, ffn_mult)?,
        })
    }

    pub fn forward(&self, x: &Tensor, causal: bool) -> Result<Tensor> {
        let h = self.ln1.forward(x)?;
        let (a, _) = self.attn.forward(&h, &h, causal)?;
        let x = (x + a)?;
        Ok((&x + self.ffn.forward(&self.ln2.forward(&x)?)?)?)
    }
}

/// A stack of self-attention blocks.
#[derive(Debug, Clone)]
pub struct Encoder {
    blocks: Vec<SelfBlock>,
}

impl Encoder {
    pub fn new(pb: &Builder, layers: usize, dim: usize, heads: usize, ffn_mult: usize) -> Result<Self> {
        Ok(Self {
            blocks: (0..layers)
                .map(|i| SelfBlock::new(&pb.sub(format!("layer{i}")), dim, heads, ffn_mult))
                .collect::<Result<_>>()?,
        })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Runs the first `depth` blocks.
    pub fn forward_depth(&self, x: &Tensor, depth: usize, causal: bool) -> Result<Tensor> {
        let mut x = x.clone();
        for b in self.blocks.iter().take(depth) {
            x = b.forward(&x, causal)?;
        }
        Ok(x)
    }

    pub fn forward(&self, x: &Tensor, causal: bool) -> Result<Tensor> {
        self.forward_depth(x, self.blocks.len(), causal)
    }
}

/// Pre-norm cross-attention block: queries attend to a separate key/value
/// stream, then a feed-forward sublayer. No self-attention.
#[derive(Debug, Clone)]
pub struct CrossBlock {
    ln_q: LayerNorm,
    ln_kv: LayerNorm,
    attn: MultiHeadAttention,
    ln_ff: LayerNorm,
    ffn: FeedForward,
}

impl CrossBlock {
    pub fn new(pb: &Builder, dim: usize, heads: usize, ffn_mult: usize) -> Result<Self> {
        Ok(Self {
            ln_q: LayerNorm::new(&pb.sub("ln_q"), dim)?,
            ln_kv: LayerNorm::new(&pb.sub("ln_kv"), dim)?,
            attn: MultiHeadAttention::new(&pb.sub("attn"), dim, dim, dim, heads, dim)?,
            ln_ff: LayerNorm::new(&pb.sub("ln_ff"), dim)?,
            ffn: FeedForward::new(&pb.sub("ffn"), dim, ffn_mult)?,
        })
    }

    pub fn forward(&self, q: &Tensor, kv: &Tensor) -> Result<(Tensor, Tensor)> {
        let (a, probs) = self.attn.forward(&self.ln_q.forward(q)?, &self.ln_kv.forward(kv)?, false)?;
        let q = (q + a)?;
        let out = (&q + self.ffn.forward(&self.ln_ff.forward(&q)?)?)?;
        Ok((out, probs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamStore;
    use candle_core::DType;

    #[test]
    fn causal_prefix_matches_full_sequence() {
        let store = ParamStore::new(DType::F64, 2);
        let enc = Encoder::new(&store.root(), 2, 8, 2, 2).unwrap();
        let x = Tensor::randn(0.0f64, 1.0, (1, 10, 8), &Device::Cpu).unwrap();
        let full = enc.forward(&x, true).unwrap().narrow(1, 0, 4).unwrap();
        let prefix = enc.forward(&x.narrow(1, 0, 4).unwrap(), true).unwrap();
        let d = (full - prefix).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(d < 1e-12, "{d}");
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let store = ParamStore::new(DType::F64, 2);
        let mha = MultiHeadAttention::new(&store.root(), 6, 4, 8, 2, 8).unwrap();
        let q = Tensor::randn(0.0f64, 1.0, (2, 3, 6), &Device::Cpu).unwrap();
        let kv = Tensor::randn(0.0f64, 1.0, (2, 5, 4), &Device::Cpu).unwrap();
        let (out, p) = mha.forward(&q, &kv, false).unwrap();
        assert_eq!(out.dims(), &[2, 3, 8]);
        assert_eq!(p.dims(), &[2, 2, 3, 5]);
        for row in p.sum(3).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap() {
            assert!((row - 1.0).abs() < 1e-12);
        }
    }
}

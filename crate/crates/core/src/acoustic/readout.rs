//! Multi-head attention readout: the latent queries the concatenated
//! reconstructions.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::{Builder, MultiHeadAttention};

#[derive(Debug, Clone)]
pub struct Readout {
    mha: MultiHeadAttention,
}

impl Readout {
    pub fn new(pb: &Builder, d_latent: usize, patch_dim: usize, d_o: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            mha: MultiHeadAttention::new(pb, d_latent, patch_dim, d_o, heads, d_o)?,
        })
    }

    /// `O_a (B, L_h, d_o)` and the attention weights `(B, heads, L_h, N*P)`.
    pub fn forward(&self, h: &Tensor, recons: &[Tensor]) -> Result<(Tensor, Tensor)> {
        if recons.is_empty() {
            return Err(Error::precondition("readout needs at least one reconstruction"));
        }
        let concat = Tensor::cat(recons, 1)?;
        self.mha.forward(h, &concat, false)
    }
}

/// Attention readout over reconstructions (Q = `h`, K = V = token-axis
/// concatenation of `recons`).
pub fn attend_reconstructions(readout: &Readout, h: &Tensor, recons: &[Tensor]) -> Result<Tensor> {
    Ok(readout.forward(h, recons)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::{DType, Device};

    #[test]
    fn rows_are_stochastic_and_lengths_follow_the_query() {
        let store = ParamStore::new(DType::F64, 2);
        let r = Readout::new(&store.root(), 16, 8, 12, 4).unwrap();
        let h = Tensor::randn(0f64, 1.0, (2, 5, 16), &Device::Cpu).unwrap();
        let recons: Vec<Tensor> = (0..3)
            .map(|_| Tensor::randn(0f64, 1.0, (2, 7, 8), &Device::Cpu).unwrap())
            .collect();
        let (o, p) = r.forward(&h, &recons).unwrap();
        assert_eq!(o.dims(), &[2, 5, 12]);
        assert_eq!(p.dims(), &[2, 4, 5, 21]);
        for s in p.sum(3).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap() {
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_keys_give_the_common_value() {
        let store = ParamStore::new(DType::F64, 2);
        let r = Readout::new(&store.root(), 16, 8, 12, 4).unwrap();
        let row = Tensor::randn(0f64, 1.0, (1, 1, 8), &Device::Cpu).unwrap();
        let recons = vec![row.broadcast_as((1, 6, 8)).unwrap().contiguous().unwrap(); 2];
        let a = attend_reconstructions(&r, &Tensor::randn(0f64, 1.0, (1, 3, 16), &Device::Cpu).unwrap(), &recons).unwrap();
        let b = attend_reconstructions(&r, &Tensor::randn(0f64, 5.0, (1, 3, 16), &Device::Cpu).unwrap(), &recons).unwrap();
        let d = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(d < 1e-12);
    }
}

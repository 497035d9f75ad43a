//! Reconstruction objectives over masked patches.

use candle_core::{Device, Tensor};

use crate::error::{Error, Result};
use crate::nn::ops::{hinge, indices};

/// Per-item mean squared error over the `masked` patches: `(B,)`.
fn masked_mse(target: &Tensor, recon: &Tensor, masked: &Tensor) -> Result<Tensor> {
    let d = (recon.contiguous()?.index_select(masked, 1)? - target.contiguous()?.index_select(masked, 1)?)?;
    Ok(d.sqr()?.flatten_from(1)?.mean(1)?)
}

/// Per-item, per-decoder masked MSE, `(B, N)`.
pub fn decoder_errors(target: &Tensor, recons: &[Tensor], masked: &[usize]) -> Result<Tensor> {
    if masked.is_empty() {
        return Err(Error::precondition("reconstruction error needs a non-empty mask"));
    }
    let idx = indices(masked)?;
    let cols = recons
        .iter()
        .map(|r| masked_mse(target, r, &idx))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::stack(&cols, 1)?)
}

/// Batch mean of `L_y + max(0, margin + L_y - L_other)`, where `L_y` is the
/// masked MSE of the label's decoder and `L_other` the mean over the rest.
pub fn recon_margin_loss_batch(
    target: &Tensor,
    recons: &[Tensor],
    labels: &[usize],
    masked: &[usize],
    margin: f64,
) -> Result<Tensor> {
    let n = recons.len();
    if n < 2 {
        return Err(Error::precondition("the margin term needs at least two decoders"));
    }
    let (b, _, _) = target.dims3()?;
    if labels.len() != b {
        return Err(Error::shape(format!("{} labels for a batch of {b}", labels.len())));
    }
    let mut onehot = vec![0f32; b * n];
    for (i, &y) in labels.iter().enumerate() {
        if y >= n {
            return Err(Error::precondition(format!("label {y} has no decoder among {n}")));
        }
        onehot[i * n + y] = 1.0;
    }
    let e = decoder_errors(target, recons, masked)?;
    let sel = Tensor::from_vec(onehot, (b, n), &Device::Cpu)?.to_dtype(e.dtype())?;
    let l_y = (&e * &sel)?.sum(1)?;
    let l_other = ((&e * (1.0 - &sel)?)?.sum(1)? / (n - 1) as f64)?;
    let penalty = hinge(&((&l_y - &l_other)? + margin)?)?;
    Ok((l_y + penalty)?.mean_all()?)
}

/// Single-item form over `(1, P, D)` tensors.
pub fn recon_margin_loss(
    target: &Tensor,
    recons: &[Tensor],
    label_index: usize,
    masked: &[usize],
    margin: f64,
) -> Result<Tensor> {
    recon_margin_loss_batch(target, recons, &[label_index], masked, margin)
}

/// Plain masked MSE of a single decoder, batch mean.
pub fn masked_mse_loss(target: &Tensor, recon: &Tensor, masked: &[usize]) -> Result<Tensor> {
    Ok(decoder_errors(target, std::slice::from_ref(recon), masked)?.mean_all()?)
}

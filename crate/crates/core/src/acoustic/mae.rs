//! Masked autoencoder over a 2-D `frames × channels` embedding with one
//! decoder per class, all reading the same latent.

use candle_core::Tensor;

use crate::config::MaeConfig;
use crate::error::{Error, Result};
use crate::features::MaskPlan;
use crate::nn::layers::{constant, sinusoidal_2d};
use crate::nn::ops::indices;
use crate::nn::{Builder, Encoder, Init, LayerNorm, Linear};

/// Patch geometry of an embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchLayout {
    pub frames: usize,
    pub channels: usize,
    pub patch_h: usize,
    pub patch_w: usize,
}

impl PatchLayout {
    pub fn grid(&self) -> (usize, usize) {
        (self.frames.div_ceil(self.patch_h), self.channels.div_ceil(self.patch_w))
    }

    pub fn n_patches(&self) -> usize {
        let (t, f) = self.grid();
        t * f
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_h * self.patch_w
    }

    /// `(B, frames, channels)` to `(B, P, patch_h * patch_w)`, zero-padding
    /// partial patches. Patch `(i, j)` lands at `i * f_p + j`.
    pub fn patchify(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, c) = x.dims3()?;
        if (t, c) != (self.frames, self.channels) {
            return Err(Error::shape(format!(
                "embedding is {t}x{c}, layout expects {}x{}",
                self.frames, self.channels
            )));
        }
        let (t_p, f_p) = self.grid();
        let (th, cw) = (t_p * self.patch_h, f_p * self.patch_w);
        let mut x = x.clone();
        if th > t {
            x = Tensor::cat(&[&x, &Tensor::zeros((b, th - t, c), x.dtype(), x.device())?], 1)?;
        }
        if cw > c {
            x = Tensor::cat(&[&x, &Tensor::zeros((b, th, cw - c), x.dtype(), x.device())?], 2)?;
        }
        Ok(x.reshape((b, t_p, self.patch_h, f_p, self.patch_w))?
            .permute((0, 1, 3, 2, 4))?
            .contiguous()?
            .reshape((b, t_p * f_p, self.patch_dim()))?)
    }

    /// Inverse of [`PatchLayout::patchify`] on the original extent.
    pub fn unpatchify(&self, p: &Tensor) -> Result<Tensor> {
        let (b, n, d) = p.dims3()?;
        let (t_p, f_p) = self.grid();
        if (n, d) != (t_p * f_p, self.patch_dim()) {
            return Err(Error::shape(format!("{n} patches of {d} values do not fit the layout")));
        }
        Ok(p.reshape((b, t_p, f_p, self.patch_h, self.patch_w))?
            .permute((0, 1, 3, 2, 4))?
            .contiguous()?
            .reshape((b, t_p * self.patch_h, f_p * self.patch_w))?
            .narrow(1, 0, self.frames)?
            .narrow(2, 0, self.channels)?
            .contiguous()?)
    }
}

#[derive(Debug, Clone)]
struct Decoder {
    embed: Linear,
    blocks: Encoder,
    ln: LayerNorm,
    head: Linear,
}

/// Output of one MAE pass.
#[derive(Debug, Clone)]
pub struct MaeOutput {
    /// Patchified input `(B, P, patch_dim)`; detached, it is the target.
    pub target: Tensor,
    /// Latent over visible patches `(B, V, d_enc)`.
    pub h: Tensor,
    /// One full-grid reconstruction per decoder, each `(B, P, patch_dim)`.
    pub recons: Vec<Tensor>,
    pub visible: Vec<usize>,
    pub masked: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Mae {
    layout: PatchLayout,
    embed: Linear,
    pos_enc: Tensor,
    encoder: Encoder,
    ln_enc: LayerNorm,
    mask_token: Tensor,
    pos_dec: Tensor,
    decoders: Vec<Decoder>,
}

impl Mae {
    pub fn new(pb: &Builder, cfg: &MaeConfig, layout: PatchLayout, n_decoders: usize) -> Result<Self> {
        if n_decoders == 0 {
            return Err(Error::config("the autoencoder needs at least one decoder"));
        }
        let (t_p, f_p) = layout.grid();
        let pd = layout.patch_dim();
        let decoders = (0..n_decoders)
            .map(|i| {
                let d = pb.sub(format!("decoder{i}"));
                Ok(Decoder {
                    embed: Linear::new(&d.sub("embed"), cfg.d_enc, cfg.d_dec)?,
                    blocks: Encoder::new(&d.sub("blocks"), cfg.dec_layers, cfg.d_dec, cfg.heads, 4)?,
                    ln: LayerNorm::new(&d.sub("ln"), cfg.d_dec)?,
                    head: Linear::new(&d.sub("head"), cfg.d_dec, pd)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            layout,
            embed: Linear::new(&pb.sub("embed"), pd, cfg.d_enc)?,
            pos_enc: constant(sinusoidal_2d(t_p, f_p, cfg.d_enc), &[t_p * f_p, cfg.d_enc], pb)?,
            encoder: Encoder::new(&pb.sub("encoder"), cfg.enc_layers, cfg.d_enc, cfg.heads, 4)?,
            ln_enc: LayerNorm::new(&pb.sub("ln_enc"), cfg.d_enc)?,
            mask_token: pb.param("mask_token", &[cfg.d_dec], Init::Normal(0.02))?,
            pos_dec: constant(sinusoidal_2d(t_p, f_p, cfg.d_dec), &[t_p * f_p, cfg.d_dec], pb)?,
            decoders,
        })
    }

    pub fn layout(&self) -> PatchLayout {
        self.layout
    }

    pub fn n_decoders(&self) -> usize {
        self.decoders.len()
    }

    /// Encodes and decodes `x: (B, frames, channels)`. With `plan` the masked
    /// patches are dropped before the encoder and replaced by the mask token
    /// at decoder input; without it every patch is visible.
    pub fn forward(&self, x: &Tensor, plan: Option<&MaskPlan>) -> Result<MaeOutput> {
        let n = self.layout.n_patches();
        let (visible, masked) = match plan {
            Some(p) => {
                if (p.t_p, p.f_p) != self.layout.grid() {
                    return Err(Error::shape(format!(
                        "mask plan grid {}x{} does not match patch grid {:?}",
                        p.t_p,
                        p.f_p,
                        self.layout.grid()
                    )));
                }
                (p.visible(), p.masked())
            }
            None => ((0..n).collect(), Vec::new()),
        };
        if visible.is_empty() {
            return Err(Error::precondition("mask plan hides every patch"));
        }
        let target = self.layout.patchify(x)?.detach();
        let (b, _, _) = target.dims3()?;
        let tokens = self.embed.forward(&target)?.broadcast_add(&self.pos_enc)?;
        let tokens = if masked.is_empty() {
            tokens
        } else {
            tokens.contiguous()?.index_select(&indices(&visible)?, 1)?
        };
        let h = self.ln_enc.forward(&self.encoder.forward(&tokens, false)?)?;

        // Position p of the decoder input reads slot `restore[p]` of
        // [visible tokens; mask tokens].
        let restore = if masked.is_empty() {
            None
        } else {
            let mut r = vec![0usize; n];
            for (k, &p) in visible.iter().enumerate() {
                r[p] = k;
            }
            for (k, &p) in masked.iter().enumerate() {
                r[p] = visible.len() + k;
            }
            Some(indices(&r)?)
        };
        let d_dec = self.mask_token.dims()[0];
        let recons = self
            .decoders
            .iter()
            .map(|d| {
                let y = d.embed.forward(&h)?;
                let full = match &restore {
                    Some(r) => {
                        let m = self.mask_token.reshape((1, 1, d_dec))?.broadcast_as((b, masked.len(), d_dec))?;
                        Tensor::cat(&[&y, &m], 1)?.contiguous()?.index_select(r, 1)?
                    }
                    None => y,
                };
                let z = d.blocks.forward(&full.broadcast_add(&self.pos_dec)?, false)?;
                d.head.forward(&d.ln.forward(&z)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MaeOutput {
            target,
            h,
            recons,
            visible,
            masked,
        })
    }
}

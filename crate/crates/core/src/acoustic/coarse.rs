//! Coarse acoustic encoder: strided convolution stages over the raw
//! waveform followed by a small transformer.

use candle_core::{Device, Tensor};

use crate::config::CoarseConfig;
use crate::error::{Error, Result};
use crate::nn::ops::indices;
use crate::nn::{Builder, Encoder, LayerNorm, Linear};

#[derive(Debug, Clone)]
struct ConvStage {
    proj: Linear,
    kernel: usize,
    stride: usize,
    /// Floor `eps` of a log-energy output: the projection yields channel
    /// pairs `(a, b)` and the stage emits `ln((a^2 + b^2 + eps) / eps) / ln(1 / eps)`.
    /// GELU when unset.
    log_energy: Option<f64>,
}

impl ConvStage {
    /// `(B, L, C)` to `(B, L / stride, C_out)`; the input is zero-padded on
    /// the right so every output frame has a full kernel.
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, l, c) = x.dims3()?;
        let frames = l / self.stride;
        if frames == 0 {
            return Err(Error::shape(format!("{l} steps shorter than stride {}", self.stride)));
        }
        let need = (frames - 1) * self.stride + self.kernel;
        let x = if need > l {
            let pad = Tensor::zeros((b, need - l, c), x.dtype(), x.device())?;
            Tensor::cat(&[x, &pad], 1)?
        } else {
            x.clone()
        };
        let cols = if self.kernel == self.stride {
            x.narrow(1, 0, frames * self.kernel)?
        } else {
            let idx: Vec<usize> = (0..frames)
                .flat_map(|f| (0..self.kernel).map(move |j| f * self.stride + j))
                .collect();
            x.contiguous()?.index_select(&indices(&idx)?, 1)?
        };
        let cols = cols.reshape((b, frames, self.kernel * c))?;
        let y = self.proj.forward(&cols)?;
        match self.log_energy {
            Some(eps) => {
                let half = y.dim(2)? / 2;
                let e = (y.narrow(2, 0, half)?.sqr()? + y.narrow(2, half, half)?.sqr()?)?;
                Ok((((e + eps)? / eps)?.log()? / (1.0 / eps).ln())?)
            }
            None => Ok(y.gelu_erf()?),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoarseEncoder {
    stages: Vec<ConvStage>,
    ln_in: LayerNorm,
    encoder: Encoder,
    ln_out: LayerNorm,
    input_samples: usize,
}

impl CoarseEncoder {
    pub fn new(pb: &Builder, cfg: &CoarseConfig, input_samples: usize) -> Result<Self> {
        let mut stages = Vec::new();
        let mut c_in = 1;
        for (i, ((&k, &s), &c)) in cfg.kernels.iter().zip(&cfg.strides).zip(&cfg.channels).enumerate() {
            let log_energy = (i == 0 && cfg.log_energy_floor > 0.0).then_some(cfg.log_energy_floor);
            let c_proj = if log_energy.is_some() { 2 * c } else { c };
            stages.push(ConvStage {
                proj: Linear::new(&pb.sub(format!("conv{i}")), k * c_in, c_proj)?,
                kernel: k,
                stride: s,
                log_energy,
            });
            c_in = c;
        }
        let w = cfg.width();
        Ok(Self {
            stages,
            ln_in: LayerNorm::new(&pb.sub("ln_in"), w)?,
            encoder: Encoder::new(&pb.sub("encoder"), cfg.layers, w, cfg.heads, 4)?,
            ln_out: LayerNorm::new(&pb.sub("ln_out"), w)?,
            input_samples,
        })
    }

    /// Frames produced for the configured input length.
    pub fn frames(&self) -> usize {
        self.stages.iter().fold(self.input_samples, |l, s| l / s.stride)
    }

    /// Output of the convolution stages alone, `(B, frames, width)`.
    pub fn features(&self, wave: &Tensor) -> Result<Tensor> {
        let (_, n) = wave.dims2()?;
        if n != self.input_samples {
            return Err(Error::shape(format!(
                "coarse encoder expects {} samples, got {n}",
                self.input_samples
            )));
        }
        let mut x = wave.unsqueeze(2)?;
        for s in &self.stages {
            x = s.forward(&x)?;
        }
        Ok(x)
    }

    /// `e_coarse`, `(B, frames, width)`, from standardized waveforms `(B, N)`.
    pub fn forward(&self, wave: &Tensor) -> Result<Tensor> {
        let x = self.ln_in.forward(&self.features(wave)?)?;
        self.ln_out.forward(&self.encoder.forward(&x, false)?)
    }
}

/// Zero-mean, unit-variance copy of `x` (all-zero input stays zero).
pub fn standardize(x: &[f32]) -> Vec<f32> {
    let n = x.len().max(1) as f64;
    let mean = x.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = x.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
    let scale = 1.0 / (var.sqrt() + 1e-5);
    x.iter().map(|&v| ((f64::from(v) - mean) * scale) as f32).collect()
}

/// `(B, N)` tensor from equal-length rows.
pub fn stack_rows(rows: &[Vec<f32>], device: &Device) -> Result<Tensor> {
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::shape("rows differ in length"));
    }
    Ok(Tensor::from_vec(rows.concat(), (rows.len(), n), device)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Profile;
    use crate::nn::ParamStore;
    use candle_core::DType;

    #[test]
    fn desk_shape_chain() {
        let p = Profile::desk();
        let store = ParamStore::new(DType::F32, 0);
        let enc = CoarseEncoder::new(&store.root(), &p.coarse, p.audio.input_samples).unwrap();
        assert_eq!(enc.frames(), 128);
        let x = Tensor::randn(0f32, 1.0, (2, 32_800), &Device::Cpu).unwrap();
        assert_eq!(enc.forward(&x).unwrap().dims(), &[2, 128, 64]);
        let short = Tensor::zeros((1, 32_000), DType::F32, &Device::Cpu).unwrap();
        assert!(enc.forward(&short).is_err());
    }

    #[test]
    fn zero_input_gives_the_bias_pathway() {
        let p = Profile::desk();
        let store = ParamStore::new(DType::F64, 0);
        let enc = CoarseEncoder::new(&store.root(), &p.coarse, p.audio.input_samples).unwrap();
        let mut bias = Tensor::zeros(32, DType::F64, &Device::Cpu).unwrap();
        for (i, s) in enc.stages.iter().enumerate() {
            let b = store.get(&format!("conv{i}.bias")).unwrap();
            b.set(&Tensor::randn(0f64, 1.0, b.dims(), &Device::Cpu).unwrap()).unwrap();
            let w = store.get(&format!("conv{i}.weight")).unwrap();
            // Expected per-frame value: the stage-0 activation of its bias,
            // then the next stage applied to a constant input.
            bias = if i == 0 {
                let y = b.as_tensor();
                match s.log_energy {
                    Some(eps) => {
                        let half = y.dim(0).unwrap() / 2;
                        let e = (y.narrow(0, 0, half).unwrap().sqr().unwrap()
                            + y.narrow(0, half, half).unwrap().sqr().unwrap())
                        .unwrap();
                        (((e + eps).unwrap() / eps).unwrap().log().unwrap() / (1.0 / eps).ln()).unwrap()
                    }
                    None => y.gelu_erf().unwrap(),
                }
            } else {
                let tiled = Tensor::cat(&vec![bias.clone(); s.kernel], 0).unwrap();
                tiled
                    .unsqueeze(0)
                    .unwrap()
                    .matmul(w.as_tensor())
                    .unwrap()
                    .squeeze(0)
                    .unwrap()
                    .add(b.as_tensor())
                    .unwrap()
                    .gelu_erf()
                    .unwrap()
            };
        }
        let x = Tensor::zeros((1, 32_800), DType::F64, &Device::Cpu).unwrap();
        let f = enc.features(&x).unwrap().squeeze(0).unwrap().to_vec2::<f64>().unwrap();
        let want = bias.to_vec1::<f64>().unwrap();
        for row in &f {
            for (a, b) in row.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn standardize_moments() {
        let x: Vec<f32> = (0..1000).map(|i| (i as f32 * 0.1).sin() * 0.3 + 0.2).collect();
        let y = standardize(&x);
        let m = y.iter().map(|&v| f64::from(v)).sum::<f64>() / 1000.0;
        let v = y.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>() / 1000.0;
        assert!(m.abs() < 1e-5 && (v - 1.0).abs() < 1e-3);
        assert!(standardize(&[0.0; 8]).iter().all(|&v| v == 0.0));
    }
}

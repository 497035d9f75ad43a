//! Linear maps, layer normalization, feed-forward blocks and fixed positional
//! encodings.

use candle_core::{Device, Tensor, D};

use super::params::{Builder, Init};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Linear {
    w: Tensor,
    b: Option<Tensor>,
}

impl Linear {
    pub fn new(pb: &Builder, d_in: usize, d_out: usize) -> Result<Self> {
        Ok(Self {
            w: pb.param("weight", &[d_in, d_out], Init::FanIn)?,
            b: Some(pb.param("bias", &[d_out], Init::Zeros)?),
        })
    }

    pub fn no_bias(pb: &Builder, d_in: usize, d_out: usize) -> Result<Self> {
        Ok(Self {
            w: pb.param("weight", &[d_in, d_out], Init::FanIn)?,
            b: None,
        })
    }

    pub fn d_in(&self) -> usize {
        self.w.dims()[0]
    }

    pub fn d_out(&self) -> usize {
        self.w.dims()[1]
    }

    /// Applies `x W + b` over the last dimension of any-rank `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = dims[dims.len() - 1];
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let y = x.reshape((rows, d_in))?.matmul(&self.w)?;
        let y = match &self.b {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        };
        let mut out = dims;
        *out.last_mut().unwrap() = self.d_out();
        Ok(y.reshape(out)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(pb: &Builder, dim: usize) -> Result<Self> {
        Self::with_eps(pb, dim, 1e-5)
    }

    pub fn with_eps(pb: &Builder, dim: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            gamma: pb.param("gamma", &[dim], Init::Ones)?,
            beta: pb.param("beta", &[dim], Init::Zeros)?,
            eps,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mu = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mu)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let xn = xc.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(xn.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Two-layer GELU feed-forward block.
#[derive(Debug, Clone)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(pb: &Builder, dim: usize, mult: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::new(&pb.sub("up"), dim, dim * mult)?,
            down: Linear::new(&pb.sub("down"), dim * mult, dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.gelu_erf()?)
    }
}

/// Sinusoidal encodings, `(len, dim)` row-major.
pub fn sinusoidal(len: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * dim];
    for p in 0..len {
        for i in 0..dim / 2 {
            let freq = 1.0 / 10_000f64.powf(2.0 * i as f64 / dim as f64);
            out[p * dim + 2 * i] = (p as f64 * freq).sin();
            out[p * dim + 2 * i + 1] = (p as f64 * freq).cos();
        }
    }
    out
}

/// Fixed 2-D encodings for a `rows × cols` grid, flattened row-major: half
/// the channels encode the row, half the column.
pub fn sinusoidal_2d(rows: usize, cols: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let r = sinusoidal(rows, half);
    let c = sinusoidal(cols, dim - half);
    let mut out = Vec::with_capacity(rows * cols * dim);
    for i in 0..rows {
        for j in 0..cols {
            out.extend_from_slice(&r[i * half..(i + 1) * half]);
            out.extend_from_slice(&c[j * (dim - half)..(j + 1) * (dim - half)]);
        }
    }
    out
}

pub fn constant(values: Vec<f64>, shape: &[usize], pb: &Builder) -> Result<Tensor> {
    Ok(Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(pb.dtype())?)
}

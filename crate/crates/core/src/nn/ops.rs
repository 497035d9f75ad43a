//! Differentiable building blocks composed from candle tensor ops.

use candle_core::{DType, Device, Tensor, D};

use crate::error::Result;

/// Softmax over the last dimension. The subtracted maximum is detached; it
/// cancels analytically.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&m)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

/// Log-softmax over the last dimension, max-subtracted.
pub fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    let m = x.max_keepdim(D::Minus1)?.detach();
    let z = x.broadcast_sub(&m)?;
    let lse = z.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(z.broadcast_sub(&lse)?)
}

/// `max(0, x)` with gradient `1[x > 0]`, i.e. subgradient 0 at the kink.
pub fn hinge(x: &Tensor) -> Result<Tensor> {
    let mask = x.gt(0.0)?.to_dtype(x.dtype())?;
    Ok((x * mask)?)
}

/// Scalar tensor of the given dtype.
pub fn scalar(v: f64, dtype: DType) -> Result<Tensor> {
    Ok(Tensor::new(v, &Device::Cpu)?.to_dtype(dtype)?)
}

/// Row-major `(rows, cols)` tensor from f32 data.
pub fn matrix(data: &[f32], rows: usize, cols: usize, dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_slice(data, (rows, cols), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Index tensor for `index_select`.
pub fn indices(idx: &[usize]) -> Result<Tensor> {
    let v: Vec<u32> = idx.iter().map(|&i| i as u32).collect();
    Ok(Tensor::from_vec(v, idx.len(), &Device::Cpu)?)
}

/// Scalar value of a 0-d or single-element tensor as f64.
pub fn to_f64(t: &Tensor) -> Result<f64> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0], [1000.0, 1000.0, -5.0]], &Device::Cpu).unwrap();
        let s = softmax_last(&x).unwrap().sum(1).unwrap().to_vec1::<f64>().unwrap();
        for v in s {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hinge_gradient_is_zero_at_kink() {
        let x = candle_core::Var::new(&[-1.0f64, 0.0, 2.0], &Device::Cpu).unwrap();
        let y = hinge(x.as_tensor()).unwrap().sum_all().unwrap();
        let g = y.backward().unwrap();
        let g = g.get(x.as_tensor()).unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(g, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let x = Tensor::new(&[[0.3f64, -2.0, 5.0]], &Device::Cpu).unwrap();
        let a = log_softmax_last(&x).unwrap().to_vec2::<f64>().unwrap();
        let b = softmax_last(&x).unwrap().log().unwrap().to_vec2::<f64>().unwrap();
        for (p, q) in a[0].iter().zip(&b[0]) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

//! Backend classifier, cross-entropy and the automatic weighted loss.

use candle_core::{DType, Device, Tensor, D};

use crate::corpus::Task;
use crate::error::{Error, Result};
use crate::nn::ops::{log_softmax_last, softmax_last, to_f64};
use crate::nn::{Builder, Init, Linear};

/// Learned attention over frames producing a weighted mean and standard
/// deviation per channel.
#[derive(Debug, Clone)]
pub struct AttentiveStatsPooling {
    att: Linear,
    score: Linear,
    eps: f64,
}

impl AttentiveStatsPooling {
    pub fn new(pb: &Builder, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            att: Linear::new(&pb.sub("att"), dim, hidden)?,
            score: Linear::new(&pb.sub("score"), hidden, 1)?,
            eps: 1e-6,
        })
    }

    /// Attention weights `(B, L)` over the frames of `x: (B, L, D)`.
    pub fn weights(&self, x: &Tensor) -> Result<Tensor> {
        let s = self.score.forward(&self.att.forward(x)?.tanh()?)?.squeeze(D::Minus1)?;
        softmax_last(&s)
    }

    /// `(B, 2D)`: weighted mean then weighted standard deviation.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let alpha = self.weights(x)?.unsqueeze(1)?;
        self.pool_with(x, &alpha)
    }

    /// Pools with explicit weights `(B, 1, L)`.
    pub fn pool_with(&self, x: &Tensor, alpha: &Tensor) -> Result<Tensor> {
        let mu = alpha.matmul(x)?;
        let xc = x.broadcast_sub(&mu)?;
        let var = alpha.matmul(&xc.sqr()?)?;
        // sqrt(var + eps) - sqrt(eps) is exactly 0 for constant frames and
        // keeps a finite gradient there.
        let std = ((var + self.eps)?.sqrt()? - self.eps.sqrt())?;
        Ok(Tensor::cat(&[mu.squeeze(1)?, std.squeeze(1)?], 1)?)
    }
}

/// Attentive statistics pooling followed by a two-layer feed-forward head.
#[derive(Debug, Clone)]
pub struct Classifier {
    pool: AttentiveStatsPooling,
    fc1: Linear,
    fc2: Linear,
    task: Task,
}

impl Classifier {
    pub fn new(pb: &Builder, dim: usize, hidden: usize, task: Task) -> Result<Self> {
        Ok(Self {
            pool: AttentiveStatsPooling::new(&pb.sub("pool"), dim, hidden)?,
            fc1: Linear::new(&pb.sub("fc1"), 2 * dim, hidden)?,
            fc2: Linear::new(&pb.sub("fc2"), hidden, task.n_classes())?,
            task,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn pooling(&self) -> &AttentiveStatsPooling {
        &self.pool
    }

    /// Logits `(B, n_classes)` from frames `(B, L, D)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let pooled = self.pool.forward(x)?;
        self.fc2.forward(&self.fc1.forward(&pooled)?.gelu_erf()?)
    }
}

fn one_hot(labels: &[usize], n: usize, dtype: DType) -> Result<Tensor> {
    let mut v = vec![0f32; labels.len() * n];
    for (i, &l) in labels.iter().enumerate() {
        if l >= n {
            return Err(Error::precondition(format!("label {l} out of range for {n} classes")));
        }
        v[i * n + l] = 1.0;
    }
    Ok(Tensor::from_vec(v, (labels.len(), n), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Mean softmax cross-entropy of logits `(B, C)` against class indices.
pub fn cls_loss(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, c) = logits.dims2()?;
    if b != labels.len() || b == 0 {
        return Err(Error::shape(format!("{b} logit rows for {} labels", labels.len())));
    }
    let target = one_hot(labels, c, logits.dtype())?;
    let nll = (log_softmax_last(logits)? * target)?.sum(1)?.neg()?;
    Ok(nll.mean_all()?)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `L_cls / (2 w_cls^2) + L_recon / (2 w_recon^2) + ln(1 + w_cls^2) + ln(1 + w_recon^2)`.
pub fn awl_combine(l_cls: &Tensor, l_recon: &Tensor, w_cls: &Tensor, w_recon: &Tensor) -> Result<Tensor> {
    for (name, t) in [("classification", l_cls), ("reconstruction", l_recon)] {
        let v = to_f64(t)?;
        if !v.is_finite() || v < 0.0 {
            return Err(Error::precondition(format!("{name} loss {v} is not finite and non-negative")));
        }
    }
    let term = |l: &Tensor, w: &Tensor| -> Result<Tensor> {
        let w2 = w.sqr()?;
        let data = (l / (&w2 * 2.0)?)?;
        let reg = (w2 + 1.0)?.log()?;
        Ok((data + reg)?)
    };
    Ok((term(l_cls, w_cls)? + term(l_recon, w_recon)?)?)
}

/// The two learnable loss weights, each parameterized as `w = theta^2`.
#[derive(Debug, Clone)]
pub struct Awl {
    theta_cls: Tensor,
    theta_recon: Tensor,
}

/// Parameter-name prefix of the loss weights.
pub const AWL_PREFIX: &str = "awl";

impl Awl {
    pub fn new(pb: &Builder) -> Result<Self> {
        Ok(Self {
            theta_cls: pb.param("theta_cls", &[], Init::Ones)?,
            theta_recon: pb.param("theta_recon", &[], Init::Ones)?,
        })
    }

    pub fn weights_tensors(&self) -> Result<(Tensor, Tensor)> {
        Ok((self.theta_cls.sqr()?, self.theta_recon.sqr()?))
    }

    /// Current `(w_cls, w_recon)`.
    pub fn weights(&self) -> Result<(f64, f64)> {
        let (a, b) = self.weights_tensors()?;
        Ok((to_f64(&a)?, to_f64(&b)?))
    }

    pub fn combine(&self, l_cls: &Tensor, l_recon: &Tensor) -> Result<Tensor> {
        let (a, b) = self.weights_tensors()?;
        awl_combine(l_cls, l_recon, &a, &b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;

    fn t(v: f64) -> Tensor {
        Tensor::new(v, &Device::Cpu).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln_n() {
        let l = Tensor::zeros((1, 4), DType::F64, &Device::Cpu).unwrap();
        let v = to_f64(&cls_loss(&l, &[2]).unwrap()).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn hand_evaluated_cross_entropy() {
        let l = Tensor::new(&[[2.0f64, 0.0, 0.0]], &Device::Cpu).unwrap();
        let v = to_f64(&cls_loss(&l, &[0]).unwrap()).unwrap();
        assert!((v - (1.0 + 2.0 * (-2f64).exp()).ln()).abs() < 1e-15);
        assert!((v - 0.2395).abs() < 5e-5);
    }

    #[test]
    fn large_margin_drives_loss_to_zero() {
        let l = Tensor::new(&[[500.0f64, 0.0, -3.0]], &Device::Cpu).unwrap();
        let v = to_f64(&cls_loss(&l, &[0]).unwrap()).unwrap();
        assert!((0.0..1e-200).contains(&v));
    }

    #[test]
    fn awl_worked_examples() {
        let v = to_f64(&awl_combine(&t(0.0), &t(0.0), &t(1.0), &t(1.0)).unwrap()).unwrap();
        assert!((v - 2.0 * 2f64.ln()).abs() < 1e-12);
        let v = to_f64(&awl_combine(&t(1.0), &t(0.14), &t(1.0), &t(1.0)).unwrap()).unwrap();
        assert!((v - 1.9563).abs() < 5e-5);
        assert!(awl_combine(&t(f64::NAN), &t(0.0), &t(1.0), &t(1.0)).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn constant_frames_have_zero_std() {
        let store = ParamStore::new(DType::F64, 1);
        let pool = AttentiveStatsPooling::new(&store.root(), 3, 8).unwrap();
        let x = Tensor::new(&[[[0.5f64, -1.0, 2.0]; 6]], &Device::Cpu).unwrap();
        let p = pool.forward(&x).unwrap().to_vec2::<f64>().unwrap();
        for (a, b) in p[0][..3].iter().zip([0.5, -1.0, 2.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(p[0][3..].iter().all(|s| s.abs() < 1e-12));
    }

    #[test]
    fn head_sizes_follow_tasks() {
        let store = ParamStore::new(DType::F32, 1);
        let x = Tensor::zeros((2, 5, 8), DType::F32, &Device::Cpu).unwrap();
        for (task, n) in [(Task::Vq, 4), (Task::Aux, 3), (Task::Dec, 3), (Task::Bin, 2)] {
            let c = Classifier::new(&store.root().sub(task.name()), 8, 16, task).unwrap();
            assert_eq!(c.forward(&x).unwrap().dims(), &[2, n]);
        }
    }
}

//! AdamW with decoupled weight decay, per-parameter learning-rate
//! multipliers, global-norm clipping and serializable state.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::params::{Init, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

struct Slot {
    var: Var,
    m: Var,
    v: Var,
    lr_mult: f64,
    decay: bool,
}

pub struct AdamW {
    cfg: AdamWConfig,
    slots: BTreeMap<String, Slot>,
    step: u64,
}

/// Optimizer state as saved in checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamWMeta {
    pub step: u64,
    pub config: AdamWConfig,
}

impl AdamW {
    /// Tracks every parameter of `store`. `group` maps a parameter name to
    /// `(lr multiplier, apply weight decay)`.
    pub fn new(store: &ParamStore, cfg: AdamWConfig, group: impl Fn(&str) -> (f64, bool)) -> Result<Self> {
        let mut slots = BTreeMap::new();
        for (name, var) in store.vars() {
            let (lr_mult, decay) = group(&name);
            let zeros = var.as_tensor().zeros_like()?;
            slots.insert(
                name,
                Slot {
                    m: Var::from_tensor(&zeros)?,
                    v: Var::from_tensor(&zeros.copy()?)?,
                    var,
                    lr_mult,
                    decay,
                },
            );
        }
        Ok(Self { cfg, slots, step: 0 })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.cfg
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Global L2 norm of the gradients of tracked parameters.
    pub fn grad_norm(&self, grads: &GradStore) -> Result<f64> {
        let mut acc = 0.0;
        for s in self.slots.values() {
            if let Some(g) = grads.get(s.var.as_tensor()) {
                acc += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            }
        }
        Ok(acc.sqrt())
    }

    /// One update. Gradients are scaled down to `clip` global norm when
    /// `clip > 0`. Returns the pre-clip norm.
    pub fn step(&mut self, grads: &GradStore, clip: f64) -> Result<f64> {
        let norm = self.grad_norm(grads)?;
        if !norm.is_finite() {
            return Err(Error::precondition("non-finite gradient norm"));
        }
        let scale = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for s in self.slots.values() {
            let Some(g) = grads.get(s.var.as_tensor()) else {
                continue;
            };
            let g = (g * scale)?;
            let m = ((s.m.as_tensor() * b1)? + (&g * (1.0 - b1))?)?;
            let v = ((s.v.as_tensor() * b2)? + (g.sqr()? * (1.0 - b2))?)?;
            let lr = self.cfg.lr * s.lr_mult;
            let update = ((&m / bc1)? / ((&v / bc2)?.sqrt()? + self.cfg.eps)?)?;
            let mut p = s.var.as_tensor().clone();
            if s.decay && self.cfg.weight_decay > 0.0 {
                p = (p * (1.0 - lr * self.cfg.weight_decay))?;
            }
            let p = (p - (update * lr)?)?;
            s.m.set(&m)?;
            s.v.set(&v)?;
            s.var.set(&p)?;
        }
        Ok(norm)
    }

    /// Moment estimates as a parameter store (`m.<name>`, `v.<name>`).
    pub fn state_store(&self) -> Result<ParamStore> {
        let dtype = self
            .slots
            .values()
            .next()
            .map(|s| s.var.dtype())
            .unwrap_or(DType::F32);
        let out = ParamStore::new(dtype, 0);
        let root = out.root();
        for (name, s) in &self.slots {
            for (tag, src) in [("m", &s.m), ("v", &s.v)] {
                let key = format!("{tag}.{name}");
                root.param(&key, src.dims(), Init::Zeros)?;
                if let Some(dst) = out.get(&key) {
                    dst.set(src.as_tensor())?;
                }
            }
        }
        Ok(out)
    }

    pub fn meta(&self) -> AdamWMeta {
        AdamWMeta {
            step: self.step,
            config: self.cfg,
        }
    }

    /// Restores moments and the step counter saved by [`AdamW::state_store`].
    pub fn restore(&mut self, state: &ParamStore, meta: &AdamWMeta) -> Result<()> {
        for (name, s) in &self.slots {
            let (Some(m), Some(v)) = (state.get(&format!("m.{name}")), state.get(&format!("v.{name}"))) else {
                return Err(Error::Schema {
                    context: "optimizer state".into(),
                    field: name.clone(),
                });
            };
            s.m.set(&m.as_tensor().to_dtype(s.m.dtype())?)?;
            s.v.set(&v.as_tensor().to_dtype(s.v.dtype())?)?;
        }
        self.step = meta.step;
        self.cfg = meta.config;
        Ok(())
    }
}

/// Gradient of a tensor from a store, or zeros when it received none.
pub fn grad_or_zero(grads: &GradStore, t: &Tensor) -> Result<Tensor> {
    Ok(match grads.get(t) {
        Some(g) => g.clone(),
        None => t.zeros_like()?,
    })
}

//! Semantic-acoustic fusion: three stacks of cross-attention blocks.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::FusionConfig;
use crate::error::{Error, Result};
use crate::nn::{Builder, CrossBlock, Linear};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Sa,
    As,
    Fusion,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Sa, Stage::As, Stage::Fusion];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Sa => "sa",
            Stage::As => "as",
            Stage::Fusion => "fusion",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sa" => Ok(Stage::Sa),
            "as" => Ok(Stage::As),
            "fusion" => Ok(Stage::Fusion),
            other => Err(Error::config(format!("unknown stage `{other}` (expected sa|as|fusion)"))),
        }
    }
}

/// Per-forward buffer of attention weights, `(B, heads, L_q, L_k)` per
/// stage and layer.
#[derive(Debug, Clone, Default)]
pub struct AttentionCapture {
    maps: BTreeMap<(Stage, usize), Tensor>,
}

impl AttentionCapture {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn layers(&self, stage: Stage) -> usize {
        self.maps.keys().filter(|(s, _)| *s == stage).count()
    }

    fn put(&mut self, stage: Stage, layer: usize, w: &Tensor) {
        self.maps.insert((stage, layer), w.detach());
    }
}

/// One item's attention weights for one stage and layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub stage: Stage,
    pub layer_index: usize,
    pub heads: usize,
    pub l_q: usize,
    pub l_k: usize,
    /// Row-major `heads × l_q × l_k`.
    pub weights: Vec<f32>,
}

impl AttentionMap {
    pub fn row(&self, head: usize, q: usize) -> &[f32] {
        let o = (head * self.l_q + q) * self.l_k;
        &self.weights[o..o + self.l_k]
    }
}

/// Reads item `item` of a captured map. `capture` is `None` when capture
/// was not enabled for the forward pass.
pub fn export_attention(capture: Option<&AttentionCapture>, stage: Stage, layer_index: usize, item: usize) -> Result<AttentionMap> {
    let cap = capture.ok_or_else(|| Error::precondition("attention capture was not enabled"))?;
    let n = cap.layers(stage);
    let t = cap
        .maps
        .get(&(stage, layer_index))
        .ok_or_else(|| Error::precondition(format!("layer {layer_index} out of range for {stage} ({n} layers)")))?;
    let (b, heads, l_q, l_k) = t.dims4()?;
    if item >= b {
        return Err(Error::precondition(format!("item {item} out of range for a batch of {b}")));
    }
    Ok(AttentionMap {
        stage,
        layer_index,
        heads,
        l_q,
        l_k,
        weights: t.get(item)?.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?,
    })
}

/// Stack of cross-attention blocks.
#[derive(Debug, Clone)]
pub struct CrossTransformer {
    blocks: Vec<CrossBlock>,
}

impl CrossTransformer {
    pub fn new(pb: &Builder, layers: usize, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            blocks: (0..layers)
                .map(|i| CrossBlock::new(&pb.sub(format!("layer{i}")), dim, heads, 4))
                .collect::<Result<_>>()?,
        })
    }

    pub fn forward(&self, q: &Tensor, kv: &Tensor, stage: Stage, mut capture: Option<&mut AttentionCapture>) -> Result<Tensor> {
        let mut x = q.clone();
        for (i, b) in self.blocks.iter().enumerate() {
            let (y, w) = b.forward(&x, kv)?;
            if let Some(c) = capture.as_deref_mut() {
                c.put(stage, i, &w);
            }
            x = y;
        }
        Ok(x)
    }
}

/// SA (semantic queries), AS (acoustic queries) and Fusion (Q = O_AS,
/// K = V = O_SA) transformers behind per-stream input projections.
#[derive(Debug, Clone)]
pub struct FusionModule {
    proj_s: Linear,
    proj_a: Linear,
    sa: CrossTransformer,
    as_: CrossTransformer,
    fusion: CrossTransformer,
}

impl FusionModule {
    pub fn new(pb: &Builder, cfg: &FusionConfig, d_s: usize, d_a: usize) -> Result<Self> {
        Ok(Self {
            proj_s: Linear::new(&pb.sub("proj_s"), d_s, cfg.d_f)?,
            proj_a: Linear::new(&pb.sub("proj_a"), d_a, cfg.d_f)?,
            sa: CrossTransformer::new(&pb.sub("sa"), cfg.layers, cfg.d_f, cfg.heads)?,
            as_: CrossTransformer::new(&pb.sub("as"), cfg.layers, cfg.d_f, cfg.heads)?,
            fusion: CrossTransformer::new(&pb.sub("fusion"), cfg.layers, cfg.d_f, cfg.heads)?,
        })
    }

    pub fn project(&self, o_s: &Tensor, o_a: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((self.proj_s.forward(o_s)?, self.proj_a.forward(o_a)?))
    }

    pub fn sa_transform(&self, s: &Tensor, a: &Tensor, capture: Option<&mut AttentionCapture>) -> Result<Tensor> {
        self.sa.forward(s, a, Stage::Sa, capture)
    }

    pub fn as_transform(&self, a: &Tensor, s: &Tensor, capture: Option<&mut AttentionCapture>) -> Result<Tensor> {
        self.as_.forward(a, s, Stage::As, capture)
    }

    pub fn fuse(&self, o_as: &Tensor, o_sa: &Tensor, capture: Option<&mut AttentionCapture>) -> Result<Tensor> {
        self.fusion.forward(o_as, o_sa, Stage::Fusion, capture)
    }

    /// `O_fusion (B, L_a, d_f)` from `O_s (B, L_s, D_s)` and `O_a (B, L_a, D_o)`.
    pub fn forward(&self, o_s: &Tensor, o_a: &Tensor, mut capture: Option<&mut AttentionCapture>) -> Result<Tensor> {
        let (s, a) = self.project(o_s, o_a)?;
        let o_sa = self.sa_transform(&s, &a, capture.as_deref_mut())?;
        let o_as = self.as_transform(&a, &s, capture.as_deref_mut())?;
        self.fuse(&o_as, &o_sa, capture)
    }
}

//! Configuration profiles. `desk` and `paper` ship in `profiles/`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest;
use crate::error::{Error, Result};

const DESK: &str = include_str!("../profiles/desk.toml");
const PAPER: &str = include_str!("../profiles/paper.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub input_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchConfig {
    pub patch_h: usize,
    pub patch_w: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskConfig {
    pub ratio: f64,
}

/// Which backbone layer feeds the semantic anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayerIndex {
    Index(usize),
    Named(FinalLayer),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalLayer {
    Final,
}

impl LayerIndex {
    /// Number of backbone layers to run (1-based layer index).
    pub fn depth(self, layers: usize) -> usize {
        match self {
            LayerIndex::Index(i) => i,
            LayerIndex::Named(FinalLayer::Final) => layers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemanticConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    /// Zero-pad target in samples.
    pub pad_samples: usize,
    /// Frames kept before pair pooling (K).
    pub truncate: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_mult: usize,
    pub layer_index: LayerIndex,
}

impl SemanticConfig {
    /// Backbone output length over the padded input.
    pub fn t_full(&self) -> usize {
        (self.pad_samples / self.hop).max(1)
    }

    pub fn aligned_len(&self) -> usize {
        self.truncate / 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoarseConfig {
    /// Kernel, stride and output channels of each convolution stage.
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
    pub channels: Vec<usize>,
    pub layers: usize,
    pub heads: usize,
    /// Floor of the log-energy output of the first stage (a quadrature
    /// filterbank); 0 makes it a plain GELU stage.
    #[serde(default)]
    pub log_energy_floor: f64,
}

impl CoarseConfig {
    pub fn stride(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn width(&self) -> usize {
        *self.channels.last().expect("validated")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaeConfig {
    pub d_enc: usize,
    pub enc_layers: usize,
    pub d_dec: usize,
    pub dec_layers: usize,
    pub heads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutConfig {
    pub d_o: usize,
    pub heads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub d_f: usize,
    pub layers: usize,
    pub heads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainDefaults {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub margin: f64,
    /// Learning-rate multiplier of the two loss-weighting parameters.
    pub awl_lr_mult: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub augment: bool,
    /// Compute reconstruction error on per-patch normalized targets.
    pub normalize_patches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SilenceConfig {
    pub threshold_db: f64,
    pub frame_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub name: String,
    pub audio: AudioConfig,
    pub mel: MelConfig,
    pub patch: PatchConfig,
    pub mask: MaskConfig,
    pub semantic: SemanticConfig,
    pub coarse: CoarseConfig,
    pub mae: MaeConfig,
    pub readout: ReadoutConfig,
    pub fusion: FusionConfig,
    pub classifier: ClassifierConfig,
    pub train: TrainDefaults,
    pub silence: SilenceConfig,
}

fn check(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(msg))
    }
}

impl Profile {
    pub fn desk() -> Self {
        Self::parse(DESK).expect("bundled desk profile parses")
    }

    pub fn paper() -> Self {
        Self::parse(PAPER).expect("bundled paper profile parses")
    }

    pub fn named(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::config(format!("unknown profile `{other}` (expected desk|paper)"))),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let p: Profile = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("profile serializes")
    }

    pub fn digest(&self) -> String {
        digest::json_digest(self)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.semantic;
        check(s.truncate >= 2 && s.truncate % 2 == 0, "semantic truncate (K) must be even and >= 2")?;
        check(s.truncate <= s.t_full(), "semantic truncate exceeds backbone output length")?;
        check(s.d_model % s.heads == 0, "semantic width must divide by heads")?;
        let depth = s.layer_index.depth(s.layers);
        check(depth >= 1 && depth <= s.layers, "semantic layer index out of range")?;
        check(s.n_mels <= s.n_fft / 2 && s.hop > 0 && s.hop <= s.n_fft, "semantic front end")?;
        check(s.pad_samples >= self.audio.input_samples, "semantic pad shorter than the input")?;
        let c = &self.coarse;
        check(
            !c.kernels.is_empty()
                && c.kernels.len() == c.channels.len()
                && c.strides.len() == c.channels.len()
                && c.kernels.iter().zip(&c.strides).all(|(&k, &s)| s > 0 && k >= s),
            "coarse kernels, strides and channels must pair up with kernel >= stride",
        )?;
        check(self.audio.input_samples >= c.stride(), "input shorter than the coarse stride")?;
        check(c.width() % c.heads == 0, "coarse width must divide by heads")?;
        check(self.mae.d_enc % self.mae.heads == 0 && self.mae.d_dec % self.mae.heads == 0, "mae widths")?;
        check(self.readout.d_o % self.readout.heads == 0, "readout width must divide by heads")?;
        check(self.fusion.d_f % self.fusion.heads == 0, "fusion width must divide by heads")?;
        check(self.patch.patch_h > 0 && self.patch.patch_w > 0, "patch sizes must be positive")?;
        check((0.0..1.0).contains(&self.mask.ratio), "mask ratio must lie in [0, 1)")?;
        check(self.mel.n_mels <= self.mel.n_fft / 2 && self.mel.hop > 0, "mel front end")?;
        check(self.train.batch_size > 0 && self.train.lr > 0.0, "train batch and lr")?;
        check(self.silence.threshold_db < 0.0, "silence threshold must be below 0 dBFS")?;
        Ok(())
    }

    /// Frames of the coarse embedding.
    pub fn coarse_frames(&self) -> usize {
        self.audio.input_samples / self.coarse.stride()
    }

    /// Frames of the MAE mel input.
    pub fn mel_frames(&self) -> usize {
        (self.audio.input_samples / self.mel.hop).max(1)
    }
}

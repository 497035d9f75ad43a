//! Model variants assembled from the branches.

use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::acoustic::{masked_mse_loss, recon_margin_loss_batch, CoarseEncoder, Mae, MaeOutput, PatchLayout, Readout};
use crate::classifier::{cls_loss, Awl, Classifier, AWL_PREFIX};
use crate::config::Profile;
use crate::corpus::Task;
use crate::error::{Error, Result};
use crate::features::MaskPlan;
use crate::fusion::{AttentionCapture, FusionModule};
use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Coarse encoder and classifier only, cross-entropy only.
    Baseline,
    /// Mel-spectrogram autoencoder with a single decoder.
    SMae,
    /// Mel-spectrogram autoencoder with one decoder per class.
    MMae,
    /// Multi-decoder mel autoencoder fused with the semantic branch.
    SemPlusMae,
    /// Multi-decoder autoencoder over the coarse embedding.
    CoarsePlusMae,
    /// Coarse encoder, multi-decoder autoencoder and semantic fusion.
    Sastnet,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Baseline,
        Variant::SMae,
        Variant::MMae,
        Variant::SemPlusMae,
        Variant::CoarsePlusMae,
        Variant::Sastnet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::SMae => "s_mae",
            Variant::MMae => "m_mae",
            Variant::SemPlusMae => "sem_plus_mae",
            Variant::CoarsePlusMae => "coarse_plus_mae",
            Variant::Sastnet => "sastnet",
        }
    }

    pub fn uses_coarse(self) -> bool {
        matches!(self, Variant::Baseline | Variant::CoarsePlusMae | Variant::Sastnet)
    }

    pub fn uses_mel(self) -> bool {
        matches!(self, Variant::SMae | Variant::MMae | Variant::SemPlusMae)
    }

    pub fn uses_semantic(self) -> bool {
        matches!(self, Variant::SemPlusMae | Variant::Sastnet)
    }

    pub fn uses_mae(self) -> bool {
        self != Variant::Baseline
    }

    pub fn n_decoders(self, task: Task) -> usize {
        match self {
            Variant::Baseline => 0,
            Variant::SMae => 1,
            _ => task.n_classes(),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let k = s.to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == k)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown variant `{s}` (expected baseline|s_mae|m_mae|sem_plus_mae|coarse_plus_mae|sastnet)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoarseInit {
    Random,
    /// Copied from a trained baseline checkpoint.
    Tuned,
}

impl FromStr for CoarseInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(CoarseInit::Random),
            "tuned" => Ok(CoarseInit::Tuned),
            other => Err(Error::config(format!("unknown coarse init `{other}` (expected random|tuned)"))),
        }
    }
}

impl fmt::Display for CoarseInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoarseInit::Random => "random",
            CoarseInit::Tuned => "tuned",
        })
    }
}

/// Branch inputs of one batch.
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    /// Standardized waveforms `(B, N)`.
    pub wave: Option<Tensor>,
    /// Standardized log-mel `(B, T, M)`.
    pub mel: Option<Tensor>,
    /// Frozen semantic anchors `(B, L_s, D_s)`.
    pub semantic: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Tensor,
    pub mae: Option<MaeOutput>,
}

#[derive(Debug, Clone)]
pub struct Losses {
    pub total: Tensor,
    pub cls: Tensor,
    pub recon: Option<Tensor>,
}

/// Prefix of the coarse-encoder parameters, shared by every variant that
/// has one (the tuned initialization copies this subtree).
pub const COARSE_PREFIX: &str = "coarse";

#[derive(Debug, Clone)]
pub struct Model {
    variant: Variant,
    task: Task,
    profile: Profile,
    store: ParamStore,
    coarse: Option<CoarseEncoder>,
    mae: Option<Mae>,
    readout: Option<Readout>,
    fusion: Option<FusionModule>,
    classifier: Classifier,
    awl: Option<Awl>,
}

impl Model {
    pub fn new(profile: &Profile, variant: Variant, task: Task, seed: u64) -> Result<Self> {
        Self::build(profile, variant, task, ParamStore::new(DType::F32, seed))
    }

    /// Rebuilds from a loaded store; every parameter must be consumed and
    /// none may be missing.
    pub fn from_store(profile: &Profile, variant: Variant, task: Task, store: ParamStore) -> Result<Self> {
        let n = store.len();
        let m = Self::build(profile, variant, task, store)?;
        if m.store.len() != n {
            return Err(Error::Schema {
                context: format!("{variant} model for task {task}"),
                field: "parameters".into(),
            });
        }
        Ok(m)
    }

    pub fn build(profile: &Profile, variant: Variant, task: Task, store: ParamStore) -> Result<Self> {
        profile.validate()?;
        let pb = store.root();
        let coarse = if variant.uses_coarse() {
            Some(CoarseEncoder::new(&pb.sub(COARSE_PREFIX), &profile.coarse, profile.audio.input_samples)?)
        } else {
            None
        };
        let layout = Self::layout_for(profile, variant);
        let n_dec = variant.n_decoders(task);
        let (mae, readout) = if variant.uses_mae() {
            let mae = Mae::new(&pb.sub("mae"), &profile.mae, layout, n_dec)?;
            let r = &profile.readout;
            let readout = Readout::new(&pb.sub("readout"), profile.mae.d_enc, layout.patch_dim(), r.d_o, r.heads)?;
            (Some(mae), Some(readout))
        } else {
            (None, None)
        };
        let fusion = if variant.uses_semantic() {
            Some(FusionModule::new(
                &pb.sub("fusion"),
                &profile.fusion,
                profile.semantic.d_model,
                profile.readout.d_o,
            )?)
        } else {
            None
        };
        let d_cls = if variant.uses_semantic() {
            profile.fusion.d_f
        } else if variant.uses_mae() {
            profile.readout.d_o
        } else {
            profile.coarse.width()
        };
        let classifier = Classifier::new(&pb.sub("classifier"), d_cls, profile.classifier.hidden, task)?;
        let awl = if variant.uses_mae() {
            Some(Awl::new(&pb.sub(AWL_PREFIX))?)
        } else {
            None
        };
        Ok(Self {
            variant,
            task,
            profile: profile.clone(),
            store,
            coarse,
            mae,
            readout,
            fusion,
            classifier,
            awl,
        })
    }

    fn layout_for(profile: &Profile, variant: Variant) -> PatchLayout {
        let (frames, channels) = if variant.uses_mel() {
            (profile.mel_frames(), profile.mel.n_mels)
        } else {
            (profile.coarse_frames(), profile.coarse.width())
        };
        PatchLayout {
            frames,
            channels,
            patch_h: profile.patch.patch_h,
            patch_w: profile.patch.patch_w,
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn awl(&self) -> Option<&Awl> {
        self.awl.as_ref()
    }

    pub fn n_decoders(&self) -> usize {
        self.mae.as_ref().map_or(0, Mae::n_decoders)
    }

    /// Patch grid seen by the mask planner, if the variant masks.
    pub fn mask_grid(&self) -> Option<(usize, usize)> {
        self.mae.as_ref().map(|m| m.layout().grid())
    }

    /// `e_coarse` for standardized waveforms.
    pub fn encode_coarse(&self, wave: &Tensor) -> Result<Tensor> {
        self.coarse
            .as_ref()
            .ok_or_else(|| Error::config(format!("{} has no coarse encoder", self.variant)))?
            .forward(wave)
    }

    pub fn forward(&self, inputs: &Inputs, plan: Option<&MaskPlan>, capture: Option<&mut AttentionCapture>) -> Result<Forward> {
        let need = |t: &Option<Tensor>, what: &str| -> Result<Tensor> {
            t.clone()
                .ok_or_else(|| Error::precondition(format!("{} needs {what} input", self.variant)))
        };
        let acoustic_in = if self.variant.uses_mel() {
            need(&inputs.mel, "log-mel")?
        } else {
            self.encode_coarse(&need(&inputs.wave, "waveform")?)?
        };
        let (features, mae_out) = match (&self.mae, &self.readout) {
            (Some(mae), Some(readout)) => {
                let out = mae.forward(&acoustic_in, plan)?;
                let (o_a, _) = readout.forward(&out.h, &out.recons)?;
                (o_a, Some(out))
            }
            _ => (acoustic_in, None),
        };
        let fused = match &self.fusion {
            Some(f) => f.forward(&need(&inputs.semantic, "semantic")?, &features, capture)?,
            None => features,
        };
        Ok(Forward {
            logits: self.classifier.forward(&fused)?,
            mae: mae_out,
        })
    }

    /// Classification loss, plus the reconstruction loss and the weighted
    /// combination when the pass was masked.
    pub fn losses(&self, fwd: &Forward, labels: &[usize], margin: f64) -> Result<Losses> {
        let cls = cls_loss(&fwd.logits, labels)?;
        let recon = match &fwd.mae {
            Some(out) if !out.masked.is_empty() => Some(if out.recons.len() == 1 {
                masked_mse_loss(&out.target, &out.recons[0], &out.masked)?
            } else {
                recon_margin_loss_batch(&out.target, &out.recons, labels, &out.masked, margin)?
            }),
            _ => None,
        };
        let total = match (&recon, &self.awl) {
            (Some(r), Some(awl)) => awl.combine(&cls, r)?,
            _ => cls.clone(),
        };
        Ok(Losses { total, cls, recon })
    }

    /// Optimizer grouping: `(lr multiplier, weight decay)` per parameter.
    pub fn param_group(name: &str, awl_lr_mult: f64) -> (f64, bool) {
        if name.starts_with(AWL_PREFIX) {
            return (awl_lr_mult, false);
        }
        let last = name.rsplit('.').next().unwrap_or(name);
        let decay = !(matches!(last, "bias" | "gamma" | "beta" | "mask_token"));
        (1.0, decay)
    }
}

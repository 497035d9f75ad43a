//! Single-task training, prediction and inference.

use std::io::Write;
use std::path::Path;

use candle_core::DType;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_SCHEMA};
use super::data::{Dataset, PrepMode, Preparer};
use super::lr_factor;
use crate::audio::Waveform;
use crate::classifier::argmax;
use crate::config::Profile;
use crate::corpus::{SilenceDetector, Task};
use crate::digest::json_digest;
use crate::error::{Error, Result};
use crate::evaluation::metrics::macro_f1;
use crate::features::{plan_mask, AugmentConfig, MaskPlan};
use crate::fusion::{export_attention, AttentionCapture, AttentionMap, Stage};
use crate::model::{CoarseInit, Model, Variant, COARSE_PREFIX};
use crate::nn::ops::to_f64;
use crate::nn::{AdamW, AdamWConfig};
use crate::semantic::{check_frozen, SemanticBackbone};
use crate::seed;

/// Evaluation forward passes run in chunks of this many items.
pub const EVAL_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub variant: Variant,
    pub coarse_init: CoarseInit,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub mask_ratio: f64,
    pub margin: f64,
    pub awl_lr_mult: f64,
    pub grad_clip: f64,
    pub augment: AugmentConfig,
    pub seed: u64,
    pub profile: Profile,
}

impl TrainConfig {
    /// Profile defaults for one task and variant.
    pub fn new(profile: &Profile, task: Task, variant: Variant) -> Self {
        let t = &profile.train;
        Self {
            task,
            variant,
            coarse_init: CoarseInit::Random,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            weight_decay: t.weight_decay,
            mask_ratio: profile.mask.ratio,
            margin: t.margin,
            awl_lr_mult: t.awl_lr_mult,
            grad_clip: t.grad_clip,
            augment: AugmentConfig {
                enabled: t.augment,
                ..AugmentConfig::default()
            },
            seed: 0,
            profile: profile.clone(),
        }
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) || !(self.margin >= 0.0) || !(self.grad_clip >= 0.0) {
            return Err(Error::config("lr must be positive; weight_decay, margin and grad_clip non-negative"));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::config(format!("mask ratio {} outside [0, 1)", self.mask_ratio)));
        }
        if self.coarse_init == CoarseInit::Tuned && (!self.variant.uses_coarse() || self.variant == Variant::Baseline) {
            return Err(Error::config(format!("{} cannot take a tuned coarse encoder", self.variant)));
        }
        Ok(())
    }
}

/// One optimizer step of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub cls: f64,
    pub recon: Option<f64>,
    pub w_cls: Option<f64>,
    pub w_recon: Option<f64>,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_macro_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Highest dev macro-F1 (earliest epoch on ties).
    pub best: Checkpoint,
    /// End of the final epoch, with optimizer state for resuming.
    pub last: Checkpoint,
    pub log: Vec<StepRecord>,
    pub history: Vec<EpochRecord>,
}

/// Writes step records as JSON lines.
pub fn write_log(path: &Path, log: &[StepRecord]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for r in log {
        writeln!(w, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub preds: Vec<usize>,
    pub logits: Vec<Vec<f64>>,
}

/// Mask-free evaluation over a dataset, optionally silence-trimmed.
pub fn predict(
    model: &Model,
    data: &Dataset,
    backbone: Option<&SemanticBackbone>,
    trim: Option<SilenceDetector>,
) -> Result<Predictions> {
    let prep = Preparer::new(model.profile(), model.variant())?;
    let mode = PrepMode::Eval { trim };
    let mut out = Predictions {
        preds: Vec::with_capacity(data.len()),
        logits: Vec::with_capacity(data.len()),
    };
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let items: Vec<(u64, &Waveform)> = chunk.iter().map(|&i| (i as u64, &data.waves[i])).collect();
        let inputs = prep.prepare(&items, &mode, backbone)?;
        let logits = model.forward(&inputs, None, None)?.logits.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        for row in logits {
            out.preds.push(argmax(&row));
            out.logits.push(row);
        }
    }
    Ok(out)
}

fn dev_f1(model: &Model, dev: &Dataset, backbone: Option<&SemanticBackbone>) -> Result<f64> {
    let p = predict(model, dev, backbone, None)?;
    macro_f1(&p.preds, &dev.labels, dev.task.n_classes())
}

fn step_plan(model: &Model, ratio: f64, key: u64) -> Result<Option<MaskPlan>> {
    match model.mask_grid() {
        Some(g) if ratio > 0.0 => Ok(Some(plan_mask(g, ratio, key)?)),
        _ => Ok(None),
    }
}

fn optimizer(model: &Model, cfg: &TrainConfig) -> Result<AdamW> {
    let opt_cfg = AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    };
    let mult = cfg.awl_lr_mult;
    AdamW::new(model.store(), opt_cfg, |name| Model::param_group(name, mult))
}

fn need_backbone(variant: Variant, backbone: Option<&SemanticBackbone>) -> Result<Option<&SemanticBackbone>> {
    match (variant.uses_semantic(), backbone) {
        (true, None) => Err(Error::precondition(format!("{variant} needs a semantic backbone"))),
        (true, b) => Ok(b),
        (false, _) => Ok(None),
    }
}

struct Snapshot<'a> {
    cfg: &'a TrainConfig,
    semantic_digest: Option<String>,
}

impl Snapshot<'_> {
    fn checkpoint(
        &self,
        model: &Model,
        epoch: usize,
        step: u64,
        history: &[EpochRecord],
        opt: Option<&AdamW>,
    ) -> Result<Checkpoint> {
        let copy = Model::from_store(model.profile(), model.variant(), model.task(), model.store().snapshot()?)?;
        let meta = CheckpointMeta {
            schema: CHECKPOINT_SCHEMA.into(),
            variant: model.variant(),
            task: model.task(),
            coarse_init: self.cfg.coarse_init,
            n_decoders: model.n_decoders(),
            config: self.cfg.clone(),
            config_digest: self.cfg.digest(),
            profile_digest: self.cfg.profile.digest(),
            epoch,
            step,
            history: history.to_vec(),
            awl: model.awl().map(|a| a.weights()).transpose()?,
            semantic_digest: self.semantic_digest.clone(),
        };
        let optimizer = match opt {
            Some(o) => Some((o.state_store()?, o.meta())),
            None => None,
        };
        Ok(Checkpoint {
            model: copy,
            meta,
            optimizer,
        })
    }
}

/// State to continue a run from.
#[derive(Debug, Clone, Copy)]
pub struct Resume<'a> {
    /// Final checkpoint of the previous run, with optimizer state.
    pub last: &'a Checkpoint,
    pub best: &'a Checkpoint,
}

/// Trains `cfg.variant` on `train`, selecting by dev macro-F1.
///
/// `tuned_from` supplies the coarse encoder when `cfg.coarse_init` is
/// `Tuned`. `resume` continues a previous run from its last checkpoint.
pub fn train(
    cfg: &TrainConfig,
    train: &Dataset,
    dev: &Dataset,
    backbone: Option<&SemanticBackbone>,
    tuned_from: Option<&Checkpoint>,
    resume: Option<Resume<'_>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::precondition("empty train or dev split"));
    }
    for d in [train, dev] {
        if d.task != cfg.task {
            return Err(Error::TaskMismatch {
                expected: cfg.task.to_string(),
                found: d.task.to_string(),
            });
        }
    }
    let backbone = need_backbone(cfg.variant, backbone)?;
    let frozen_before = backbone.map(SemanticBackbone::digest).transpose()?;
    let snap = Snapshot {
        cfg,
        semantic_digest: frozen_before.clone(),
    };

    let model = Model::new(&cfg.profile, cfg.variant, cfg.task, seed::substream(cfg.seed, "model_init", &[]))?;
    if cfg.coarse_init == CoarseInit::Tuned && resume.is_none() {
        let src = tuned_from.ok_or_else(|| Error::precondition("tuned coarse init needs a baseline checkpoint"))?;
        src.expect_task(cfg.task)?;
        let n = model.store().copy_subtree(src.model.store(), COARSE_PREFIX)?;
        if n == 0 {
            return Err(Error::precondition("baseline checkpoint has no coarse encoder parameters"));
        }
    }
    let mut opt = optimizer(&model, cfg)?;

    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut start_epoch = 0;
    if let Some(Resume { last: r, .. }) = resume {
        r.expect_task(cfg.task)?;
        if r.meta.variant != cfg.variant {
            return Err(Error::Schema {
                context: "resume checkpoint".into(),
                field: "variant".into(),
            });
        }
        let (state, meta) = r
            .optimizer
            .as_ref()
            .ok_or_else(|| Error::precondition("resume checkpoint carries no optimizer state"))?;
        model.store().copy_from(r.model.store(), "")?;
        opt.restore(state, meta)?;
        history = r.meta.history.clone();
        start_epoch = r.meta.epoch + 1;
    }

    let mut best: Option<Checkpoint> = resume.map(|r| r.best.clone());
    let prep = Preparer::new(&cfg.profile, cfg.variant)?;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in start_epoch..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng(cfg.seed, "shuffle", &[epoch as u64]));
        let mode = PrepMode::Train {
            seed: cfg.seed,
            epoch: epoch as u64,
            augment: cfg.augment.clone(),
        };
        let mut sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<(u64, &Waveform)> = batch.iter().map(|&i| (i as u64, &train.waves[i])).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let inputs = prep.prepare(&items, &mode, backbone)?;
            let step = opt.step_count();
            let plan = step_plan(&model, cfg.mask_ratio, seed::substream(cfg.seed, "mask", &[epoch as u64, b as u64]))?;
            let fwd = model.forward(&inputs, plan.as_ref(), None)?;
            let losses = model.losses(&fwd, &labels, cfg.margin)?;
            let lr = cfg.lr * lr_factor(step as usize, total);
            opt.set_lr(lr);
            let grad_norm = opt.step(&losses.total.backward()?, cfg.grad_clip)?;
            let loss = to_f64(&losses.total)?;
            sum += loss;
            let (w_cls, w_recon) = match model.awl() {
                Some(a) if losses.recon.is_some() => {
                    let (c, r) = a.weights()?;
                    (Some(c), Some(r))
                }
                _ => (None, None),
            };
            log.push(StepRecord {
                epoch,
                step: step + 1,
                loss,
                cls: to_f64(&losses.cls)?,
                recon: losses.recon.as_ref().map(to_f64).transpose()?,
                w_cls,
                w_recon,
                lr,
                grad_norm,
            });
        }
        if let (Some(b), Some(d)) = (backbone, &frozen_before) {
            check_frozen(b, d)?;
        }
        let rec = EpochRecord {
            epoch,
            train_loss: sum / steps_per_epoch as f64,
            dev_macro_f1: dev_f1(&model, dev, backbone)?,
        };
        log::info!(
            "{} {} epoch {epoch}: loss {:.4} dev macro-F1 {:.4}",
            cfg.variant,
            cfg.task,
            rec.train_loss,
            rec.dev_macro_f1
        );
        let improved = best_epoch(&history).map_or(true, |h| rec.dev_macro_f1 > h.dev_macro_f1);
        history.push(rec);
        if improved {
            best = Some(snap.checkpoint(&model, epoch, opt.step_count(), &history, None)?);
        }
    }
    let last_epoch = cfg.epochs - 1;
    let last = snap.checkpoint(&model, last_epoch, opt.step_count(), &history, Some(&opt))?;
    let mut best = match best {
        Some(b) => b,
        None => last.clone(),
    };
    best.meta.history = history.clone();
    Ok(TrainOutcome {
        best,
        last,
        log,
        history,
    })
}

fn best_epoch(history: &[EpochRecord]) -> Option<&EpochRecord> {
    history
        .iter()
        .fold(None, |acc: Option<&EpochRecord>, r| match acc {
            Some(a) if a.dev_macro_f1 >= r.dev_macro_f1 => Some(a),
            _ => Some(r),
        })
}

/// Coarse encoder and classifier with cross-entropy only.
pub fn train_baseline(cfg: &TrainConfig, train_set: &Dataset, dev: &Dataset) -> Result<TrainOutcome> {
    if cfg.variant != Variant::Baseline {
        return Err(Error::config(format!("train_baseline called with variant {}", cfg.variant)));
    }
    train(cfg, train_set, dev, None, None, None)
}

/// Any autoencoder variant; the backbone stays frozen throughout.
pub fn train_sastnet(
    cfg: &TrainConfig,
    train_set: &Dataset,
    dev: &Dataset,
    backbone: Option<&SemanticBackbone>,
    tuned_from: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    if cfg.variant == Variant::Baseline {
        return Err(Error::config("train_sastnet needs an autoencoder variant"));
    }
    train(cfg, train_set, dev, backbone, tuned_from, None)
}

/// Repeats one fixed batch (no augmentation, one fixed mask plan, constant
/// learning rate) and returns the combined loss before each step.
pub fn overfit_one_batch(
    cfg: &TrainConfig,
    data: &Dataset,
    items: &[usize],
    backbone: Option<&SemanticBackbone>,
    steps: usize,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::precondition("empty batch"));
    }
    let backbone = need_backbone(cfg.variant, backbone)?;
    let model = Model::new(&cfg.profile, cfg.variant, cfg.task, seed::substream(cfg.seed, "model_init", &[]))?;
    let mut opt = optimizer(&model, cfg)?;
    let prep = Preparer::new(&cfg.profile, cfg.variant)?;
    let batch: Vec<(u64, &Waveform)> = items.iter().map(|&i| (i as u64, &data.waves[i])).collect();
    let labels: Vec<usize> = items.iter().map(|&i| data.labels[i]).collect();
    let inputs = prep.prepare(&batch, &PrepMode::Eval { trim: None }, backbone)?;
    let plan = step_plan(&model, cfg.mask_ratio, seed::substream(cfg.seed, "overfit_mask", &[]))?;
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let fwd = model.forward(&inputs, plan.as_ref(), None)?;
        let l = model.losses(&fwd, &labels, cfg.margin)?;
        losses.push(to_f64(&l.total)?);
        opt.step(&l.total.backward()?, cfg.grad_clip)?;
    }
    Ok(losses)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub predicted: usize,
    pub logits: Vec<f64>,
    /// Last-layer maps of the SA, AS and Fusion stages, when requested.
    pub attention: Option<Vec<AttentionMap>>,
}

/// Deterministic mask-free forward pass on one waveform.
pub fn infer(
    ckpt: &Checkpoint,
    backbone: Option<&SemanticBackbone>,
    x: &Waveform,
    task: Task,
    capture: bool,
) -> Result<Inference> {
    ckpt.expect_task(task)?;
    let model = &ckpt.model;
    let backbone = need_backbone(model.variant(), backbone)?;
    let prep = Preparer::new(model.profile(), model.variant())?;
    let inputs = prep.prepare(&[(0, x)], &PrepMode::Eval { trim: None }, backbone)?;
    let mut cap = AttentionCapture::new();
    let fwd = model.forward(&inputs, None, capture.then_some(&mut cap))?;
    let logits: Vec<f64> = fwd.logits.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    let attention = if capture {
        if !model.variant().uses_semantic() {
            return Err(Error::precondition(format!("{} has no fusion attention", model.variant())));
        }
        let last = model.profile().fusion.layers - 1;
        Some(
            Stage::ALL
                .iter()
                .map(|&s| export_attention(Some(&cap), s, last, 0))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    Ok(Inference {
        predicted: argmax(&logits),
        logits,
        attention,
    })
}

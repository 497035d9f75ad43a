//! Frozen semantic branch: zero-pad, encode, truncate to the first K frames,
//! average-pool frame pairs.
//!
//! The stand-in backbone is a causal transformer over a log-mel front end,
//! so frames before K never see the padding and the first K frames can be
//! computed from a prefix of the padded input.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::classifier::cls_loss;
use crate::config::SemanticConfig;
use crate::corpus::{CorpusManifest, UtteranceRecord};
use crate::error::{Error, Result};
use crate::features::{augment, pad_or_crop, AugmentConfig, CropMode, LogMel};
use crate::nn::layers::{constant, sinusoidal};
use crate::nn::{AdamW, AdamWConfig, Encoder, LayerNorm, Linear, ParamStore};
use crate::{exec, seed};

/// Fixed affine map applied to natural-log mel energies.
const MEL_SHIFT: f32 = 3.0;
const MEL_SCALE: f32 = 6.0;

pub const BACKBONE_KIND: &str = "semantic-backbone";
pub const PROBE_KIND: &str = "content-probe";

/// `frames × dim` row-major semantic anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticEmbedding {
    pub frames: usize,
    pub dim: usize,
    pub frame_rate: f64,
    pub data: Vec<f32>,
}

impl SemanticEmbedding {
    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

/// Thread-safe log-mel front end of the backbone.
#[derive(Debug, Clone)]
pub struct SemanticFrontEnd {
    cfg: SemanticConfig,
    sample_rate: u32,
    mel: LogMel,
}

impl SemanticFrontEnd {
    pub fn new(cfg: &SemanticConfig, sample_rate: u32) -> Result<Self> {
        Ok(Self {
            cfg: cfg.clone(),
            sample_rate,
            mel: LogMel::new(sample_rate, cfg.n_fft, cfg.hop, cfg.n_mels)?,
        })
    }

    pub fn config(&self) -> &SemanticConfig {
        &self.cfg
    }

    /// Normalized log-mel rows `0..frames` of `x` zero-padded to the
    /// configured duration, `frames × n_mels`.
    pub fn features(&self, x: &Waveform, frames: usize) -> Result<Vec<f32>> {
        let c = &self.cfg;
        if x.sample_rate() != self.sample_rate {
            return Err(Error::precondition(format!(
                "sample rate {} does not match the semantic front end ({})",
                x.sample_rate(),
                self.sample_rate
            )));
        }
        if x.len() > c.pad_samples {
            return Err(Error::precondition(format!(
                "input of {} samples exceeds the {}-sample pad duration",
                x.len(),
                c.pad_samples
            )));
        }
        if frames == 0 || frames > c.t_full() {
            return Err(Error::precondition(format!("{frames} frames outside 1..={}", c.t_full())));
        }
        let needed = if frames == c.t_full() {
            c.pad_samples
        } else {
            ((frames - 1) * c.hop + c.n_fft).min(c.pad_samples)
        };
        let mut s = x.samples().to_vec();
        s.resize(needed.max(s.len()), 0.0);
        let spec = self.mel.compute(&Waveform::new(s, self.sample_rate)?)?;
        let n = c.n_mels;
        Ok(spec.data[..frames * n]
            .iter()
            .map(|v| (v + MEL_SHIFT) / MEL_SCALE)
            .collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BackboneMeta {
    pub kind: String,
    pub sample_rate: u32,
    pub config: SemanticConfig,
}

/// Causal transformer backbone over the front end.
#[derive(Debug, Clone)]
pub struct SemanticBackbone {
    front: SemanticFrontEnd,
    store: ParamStore,
    input: Linear,
    encoder: Encoder,
    ln_f: LayerNorm,
    pos: Tensor,
}

impl SemanticBackbone {
    pub fn new(cfg: &SemanticConfig, sample_rate: u32, seed: u64) -> Result<Self> {
        Self::build(cfg, sample_rate, ParamStore::new(DType::F32, seed))
    }

    fn build(cfg: &SemanticConfig, sample_rate: u32, store: ParamStore) -> Result<Self> {
        let pb = store.root();
        let d = cfg.d_model;
        let pos = constant(sinusoidal(cfg.t_full(), d), &[cfg.t_full(), d], &pb)?;
        Ok(Self {
            front: SemanticFrontEnd::new(cfg, sample_rate)?,
            input: Linear::new(&pb.sub("input"), cfg.n_mels, d)?,
            encoder: Encoder::new(&pb.sub("encoder"), cfg.layers, d, cfg.heads, cfg.ffn_mult)?,
            ln_f: LayerNorm::new(&pb.sub("ln_f"), d)?,
            pos,
            store,
        })
    }

    pub fn front(&self) -> &SemanticFrontEnd {
        &self.front
    }

    pub fn config(&self) -> &SemanticConfig {
        &self.front.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn digest(&self) -> Result<String> {
        self.store.digest()
    }

    pub fn meta(&self) -> BackboneMeta {
        BackboneMeta {
            kind: BACKBONE_KIND.into(),
            sample_rate: self.front.sample_rate,
            config: self.front.cfg.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.store.save(path, &self.meta())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (store, meta): (ParamStore, BackboneMeta) = ParamStore::load(path, 0)?;
        if meta.kind != BACKBONE_KIND {
            return Err(Error::Schema {
                context: path.display().to_string(),
                field: "kind".into(),
            });
        }
        let n = store.len();
        let b = Self::build(&meta.config, meta.sample_rate, store)?;
        if b.store.len() != n {
            return Err(Error::Schema {
                context: path.display().to_string(),
                field: "parameters".into(),
            });
        }
        Ok(b)
    }

    /// Backbone states `(B, T, D)` for normalized features `(B, T, n_mels)`.
    pub fn forward_features(&self, feats: &Tensor) -> Result<Tensor> {
        let (_, t, _) = feats.dims3()?;
        let cfg = self.config();
        let h = self.input.forward(feats)?.broadcast_add(&self.pos.narrow(0, 0, t)?)?;
        let depth = cfg.layer_index.depth(cfg.layers);
        self.ln_f.forward(&self.encoder.forward_depth(&h, depth, true)?)
    }

    fn batch_features(&self, xs: &[Waveform], frames: usize) -> Result<Tensor> {
        let n = self.config().n_mels;
        let front = &self.front;
        let rows = exec::try_map(xs, |x| front.features(x, frames))?;
        let flat: Vec<f32> = rows.concat();
        Ok(Tensor::from_vec(flat, (xs.len(), frames, n), &Device::Cpu)?)
    }

    /// `O_s` for a batch, `(B, K/2, D)`, through the K-frame prefix.
    pub fn encode_batch(&self, xs: &[Waveform]) -> Result<Tensor> {
        let k = self.config().truncate;
        let feats = self.batch_features(xs, k)?;
        pool_pairs(&self.forward_features(&feats)?)
    }

    /// Prefix fast path for one input.
    pub fn encode(&self, x: &Waveform) -> Result<SemanticEmbedding> {
        self.embedding(&self.encode_batch(std::slice::from_ref(x))?)
    }

    /// Reference path: runs the backbone over the whole padded input, then
    /// truncates and pools.
    pub fn encode_full(&self, x: &Waveform) -> Result<SemanticEmbedding> {
        let cfg = self.config();
        let feats = self.batch_features(std::slice::from_ref(x), cfg.t_full())?;
        let s_pad = self.forward_features(&feats)?;
        let s_trunc = s_pad.narrow(1, 0, cfg.truncate)?;
        self.embedding(&pool_pairs(&s_trunc)?)
    }

    /// Backbone output over the whole padded input, `T_full × D`.
    pub fn encode_padded(&self, x: &Waveform) -> Result<Tensor> {
        let feats = self.batch_features(std::slice::from_ref(x), self.config().t_full())?;
        Ok(self.forward_features(&feats)?.squeeze(0)?)
    }

    fn embedding(&self, t: &Tensor) -> Result<SemanticEmbedding> {
        let t = t.squeeze(0)?.to_dtype(DType::F32)?;
        let (frames, dim) = t.dims2()?;
        let cfg = self.config();
        Ok(SemanticEmbedding {
            frames,
            dim,
            frame_rate: f64::from(self.front.sample_rate) / (2 * cfg.hop) as f64,
            data: t.flatten_all()?.to_vec1()?,
        })
    }
}

/// Mean of non-overlapping frame pairs: `(B, K, D)` to `(B, K/2, D)`.
pub fn pool_pairs(x: &Tensor) -> Result<Tensor> {
    let (b, k, d) = x.dims3()?;
    if k % 2 != 0 {
        return Err(Error::config(format!("cannot pool {k} frames in pairs")));
    }
    Ok(x.reshape((b, k / 2, 2, d))?.mean(2)?)
}

/// True iff the two parameter digests are identical.
pub fn assert_frozen(before_digest: &str, after_digest: &str) -> bool {
    before_digest == after_digest
}

/// Errors with a diagnostic when the backbone no longer matches `before`.
pub fn check_frozen(backbone: &SemanticBackbone, before: &str) -> Result<()> {
    let after = backbone.digest()?;
    if assert_frozen(before, &after) {
        Ok(())
    } else {
        Err(Error::FrozenViolation(format!(
            "semantic backbone digest changed from {before} to {after}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub input_samples: usize,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 16,
            lr: 1e-3,
            weight_decay: 1e-4,
            input_samples: 32_800,
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProbeMeta {
    pub kind: String,
    pub classes: Vec<u64>,
    pub dim: usize,
}

/// The utterance-id head used during pretraining, kept for probing.
#[derive(Debug, Clone)]
pub struct ContentProbe {
    classes: Vec<u64>,
    head: Linear,
    store: ParamStore,
    input_samples: usize,
}

impl ContentProbe {
    fn build(store: ParamStore, classes: Vec<u64>, dim: usize, input_samples: usize) -> Result<Self> {
        let head = Linear::new(&store.root().sub("probe"), dim, classes.len())?;
        Ok(Self {
            classes,
            head,
            store,
            input_samples,
        })
    }

    pub fn classes(&self) -> &[u64] {
        &self.classes
    }

    fn logits(&self, o_s: &Tensor) -> Result<Tensor> {
        self.head.forward(&o_s.mean(1)?)
    }

    /// Predicted utterance ids for centred crops of `xs`.
    pub fn predict(&self, backbone: &SemanticBackbone, xs: &[Waveform]) -> Result<Vec<u64>> {
        let n = self.input_samples;
        let crops = exec::try_map(xs, |x| pad_or_crop(x, n, CropMode::Eval))?;
        let mut out = Vec::with_capacity(xs.len());
        for chunk in crops.chunks(32) {
            let logits = self.logits(&backbone.encode_batch(chunk)?)?.to_dtype(DType::F64)?;
            for row in logits.to_vec2::<f64>()? {
                out.push(self.classes[crate::classifier::argmax(&row)]);
            }
        }
        Ok(out)
    }

    /// Fraction of `records` whose utterance id is recovered.
    pub fn accuracy(&self, backbone: &SemanticBackbone, manifest: &CorpusManifest, records: &[&UtteranceRecord]) -> Result<f64> {
        if records.is_empty() {
            return Err(Error::precondition("probe needs at least one record"));
        }
        let xs = exec::try_map(records, |r| Waveform::read_wav(&manifest.wav_path(r)))?;
        let pred = self.predict(backbone, &xs)?;
        let hits = pred.iter().zip(records).filter(|(p, r)| **p == r.utt_id).count();
        Ok(hits as f64 / records.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = ProbeMeta {
            kind: PROBE_KIND.into(),
            classes: self.classes.clone(),
            dim: self.head.d_in(),
        };
        self.store.save(path, &(meta, self.input_samples))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (store, (meta, input_samples)): (ParamStore, (ProbeMeta, usize)) = ParamStore::load(path, 0)?;
        if meta.kind != PROBE_KIND {
            return Err(Error::Schema {
                context: path.display().to_string(),
                field: "kind".into(),
            });
        }
        Self::build(store, meta.classes, meta.dim, input_samples)
    }
}

pub struct Pretrained {
    pub backbone: SemanticBackbone,
    pub probe: ContentProbe,
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
}

/// Bona fide records of seen content used for pretraining.
pub fn pretraining_records(manifest: &CorpusManifest) -> Vec<&UtteranceRecord> {
    let thr = manifest.config.id_threshold;
    manifest
        .records
        .iter()
        .filter(|r| r.is_bonafide() && r.utt_id <= thr)
        .collect()
}

/// Trains the backbone with an utterance-id head on bona fide audio.
pub fn pretrain_toy_semantic(
    manifest: &CorpusManifest,
    cfg: &SemanticConfig,
    sample_rate: u32,
    pc: &PretrainConfig,
) -> Result<Pretrained> {
    let records = pretraining_records(manifest);
    if records.is_empty() {
        return Err(Error::precondition("corpus has no bona fide records of seen content"));
    }
    let mut classes: Vec<u64> = records.iter().map(|r| r.utt_id).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::precondition("pretraining needs at least two distinct utterance ids"));
    }
    let labels: Vec<usize> = records
        .iter()
        .map(|r| classes.binary_search(&r.utt_id).expect("collected above"))
        .collect();
    let waves = exec::try_map(&records, |r| Waveform::read_wav(&manifest.wav_path(r)))?;

    let store = ParamStore::new(DType::F32, seed::substream(pc.seed, "semantic_init", &[]));
    let backbone = SemanticBackbone::build(cfg, sample_rate, store.clone())?;
    let probe = ContentProbe::build(store.clone(), classes.clone(), cfg.d_model, pc.input_samples)?;
    let opt_cfg = AdamWConfig {
        lr: pc.lr,
        weight_decay: pc.weight_decay,
        ..AdamWConfig::default()
    };
    let mut opt = AdamW::new(&store, opt_cfg, |name| (1.0, !name.contains("ln") && !name.ends_with("bias")))?;

    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut losses = Vec::with_capacity(pc.epochs);
    let steps_per_epoch = records.len().div_ceil(pc.batch_size.max(1));
    let total = (steps_per_epoch * pc.epochs).max(1);
    for epoch in 0..pc.epochs {
        order.shuffle(&mut seed::rng(pc.seed, "semantic_shuffle", &[epoch as u64]));
        let mut sum = 0.0;
        for (step, batch) in order.chunks(pc.batch_size.max(1)).enumerate() {
            let xs = exec::try_map(batch, |&i| {
                let s = seed::substream(pc.seed, "semantic_item", &[epoch as u64, i as u64]);
                let crop = pad_or_crop(&waves[i], pc.input_samples, CropMode::Train { seed: s })?;
                augment(&crop, s, &pc.augment)
            })?;
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let loss = cls_loss(&probe.logits(&backbone.encode_batch(&xs)?)?, &y)?;
            sum += crate::nn::ops::to_f64(&loss)?;
            let t = epoch * steps_per_epoch + step;
            opt.set_lr(pc.lr * crate::training::lr_factor(t, total));
            opt.step(&loss.backward()?, 5.0)?;
        }
        let mean = sum / steps_per_epoch as f64;
        log::info!("semantic pretrain epoch {epoch}: loss {mean:.4}");
        losses.push(mean);
    }

    // Split the joint store into the frozen backbone and the probe head.
    let b_store = ParamStore::new(DType::F32, 0);
    let p_store = ParamStore::new(DType::F32, 0);
    for (name, var) in store.vars() {
        let dst = if name.starts_with("probe.") { &p_store } else { &b_store };
        dst.insert(&name, var.as_tensor().copy()?)?;
    }
    Ok(Pretrained {
        backbone: SemanticBackbone::build(cfg, sample_rate, b_store)?,
        probe: ContentProbe::build(p_store, classes, cfg.d_model, pc.input_samples)?,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Profile;

    fn tiny() -> SemanticConfig {
        let mut c = Profile::desk().semantic;
        c.pad_samples = 16_384;
        c.truncate = 8;
        c.layers = 2;
        c
    }

    fn wave(n: usize) -> Waveform {
        Waveform::new((0..n).map(|i| (i as f32 * 0.05).sin() * 0.1).collect(), 16_000).unwrap()
    }

    #[test]
    fn prefix_path_matches_full_chain() {
        let b = SemanticBackbone::new(&tiny(), 16_000, 3).unwrap();
        let x = wave(6_000);
        let fast = b.encode(&x).unwrap();
        let full = b.encode_full(&x).unwrap();
        assert_eq!((fast.frames, fast.dim), (4, 64));
        for (a, c) in fast.data.iter().zip(&full.data) {
            assert!((a - c).abs() < 1e-5, "{a} vs {c}");
        }
    }

    #[test]
    fn overlong_input_is_rejected() {
        let b = SemanticBackbone::new(&tiny(), 16_000, 3).unwrap();
        assert!(b.encode(&wave(16_385)).is_err());
    }

    #[test]
    fn pooling_identical_pairs_returns_pair_value() {
        let v: Vec<f32> = vec![1.0, 2.0, 1.0, 2.0, -3.0, 4.0, -3.0, 4.0];
        let t = Tensor::from_vec(v, (1, 4, 2), &Device::Cpu).unwrap();
        let p = pool_pairs(&t).unwrap().squeeze(0).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(p, vec![vec![1.0, 2.0], vec![-3.0, 4.0]]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = SemanticBackbone::new(&tiny(), 16_000, 9).unwrap();
        let p = dir.path().join("semantic.safetensors");
        b.save(&p).unwrap();
        let c = SemanticBackbone::load(&p).unwrap();
        assert_eq!(b.digest().unwrap(), c.digest().unwrap());
        let x = wave(3_000);
        assert_eq!(b.encode(&x).unwrap(), c.encode(&x).unwrap());
        assert_eq!(std::fs::read(&p).unwrap(), {
            c.save(&dir.path().join("again")).unwrap();
            std::fs::read(dir.path().join("again")).unwrap()
        });
    }

    #[test]
    fn frozen_check() {
        let b = SemanticBackbone::new(&tiny(), 16_000, 9).unwrap();
        let d = b.digest().unwrap();
        assert!(check_frozen(&b, &d).is_ok());
        let (name, var) = b.store().vars().remove(0);
        var.set(&(var.as_tensor() + 1.0).unwrap()).unwrap();
        let err = check_frozen(&b, &d).unwrap_err();
        assert!(matches!(err, Error::FrozenViolation(_)), "{name}: {err}");
        assert!(assert_frozen(&ParamStore::new(DType::F32, 0).digest().unwrap(), &ParamStore::new(DType::F32, 1).digest().unwrap()));
    }
}

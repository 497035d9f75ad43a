//! Labelled waveform sets and batch preparation.

use std::collections::BTreeSet;

use candle_core::{Device, Tensor};

use crate::acoustic::coarse::{stack_rows, standardize};
use crate::audio::Waveform;
use crate::config::Profile;
use crate::corpus::{split_seen_unseen, train_dev, CorpusManifest, SilenceDetector, Task, UtteranceRecord};
use crate::error::{Error, Result};
use crate::features::{augment, pad_or_crop, AugmentConfig, CropMode, LogMel};
use crate::model::{Inputs, Variant};
use crate::semantic::SemanticBackbone;
use crate::{exec, seed};

/// Task-eligible records of a manifest with their audio and class indices.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub task: Task,
    pub records: Vec<UtteranceRecord>,
    pub waves: Vec<Waveform>,
    pub labels: Vec<usize>,
}

impl Dataset {
    /// Reads every record of `manifest` that has a class for `task`.
    pub fn load(manifest: &CorpusManifest, task: Task) -> Result<Self> {
        let records: Vec<UtteranceRecord> = manifest
            .records
            .iter()
            .filter(|r| task.class_of(&r.label).is_some())
            .cloned()
            .collect();
        let waves = exec::try_map(&records, |r| Waveform::read_wav(&manifest.wav_path(r)))?;
        let labels = records
            .iter()
            .map(|r| task.class_of(&r.label).expect("filtered above"))
            .collect();
        Ok(Self {
            task,
            records,
            waves,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Items at `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            task: self.task,
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            waves: idx.iter().map(|&i| self.waves[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn filter(&self, keep: impl Fn(&UtteranceRecord) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(&self.records[i])).collect();
        self.subset(&idx)
    }
}

/// How items are turned into model inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum PrepMode {
    /// Augmentation and a random crop, both keyed by `(seed, epoch, item)`.
    Train { seed: u64, epoch: u64, augment: AugmentConfig },
    /// Centred crop; optional silence trimming first.
    Eval { trim: Option<SilenceDetector> },
}

/// Builds branch inputs for a variant.
#[derive(Debug, Clone)]
pub struct Preparer {
    variant: Variant,
    input_samples: usize,
    mel: Option<LogMel>,
}

impl Preparer {
    pub fn new(profile: &Profile, variant: Variant) -> Result<Self> {
        let mel = if variant.uses_mel() {
            let m = &profile.mel;
            Some(LogMel::new(profile.audio.sample_rate, m.n_fft, m.hop, m.n_mels)?)
        } else {
            None
        };
        Ok(Self {
            variant,
            input_samples: profile.audio.input_samples,
            mel,
        })
    }

    /// The fixed-length waveform fed to every branch.
    pub fn crop(&self, x: &Waveform, item: u64, mode: &PrepMode) -> Result<Waveform> {
        match mode {
            PrepMode::Train { seed: s, epoch, augment: a } => {
                let k = seed::substream(*s, "item", &[*epoch, item]);
                let y = augment(x, k, a)?;
                pad_or_crop(&y, self.input_samples, CropMode::Train { seed: k })
            }
            PrepMode::Eval { trim } => {
                let y = match trim {
                    Some(d) => match d.trim(x) {
                        Ok(t) => t,
                        Err(Error::AllSilence) => x.clone(),
                        Err(e) => return Err(e),
                    },
                    None => x.clone(),
                };
                pad_or_crop(&y, self.input_samples, CropMode::Eval)
            }
        }
    }

    /// Inputs for `items` (pairs of item key and waveform).
    pub fn prepare(&self, items: &[(u64, &Waveform)], mode: &PrepMode, backbone: Option<&SemanticBackbone>) -> Result<Inputs> {
        struct Prepped {
            crop: Waveform,
            wave: Option<Vec<f32>>,
            mel: Option<Vec<f32>>,
        }
        let rows = exec::try_map(items, |(k, x)| -> Result<Prepped> {
            let crop = self.crop(x, *k, mode)?;
            let wave = self.variant.uses_coarse().then(|| standardize(crop.samples()));
            let mel = match &self.mel {
                Some(m) => Some(standardize(&m.compute(&crop)?.data)),
                None => None,
            };
            Ok(Prepped { crop, wave, mel })
        })?;
        let dev = Device::Cpu;
        let wave = if self.variant.uses_coarse() {
            let w: Vec<Vec<f32>> = rows.iter().map(|r| r.wave.clone().unwrap_or_default()).collect();
            Some(stack_rows(&w, &dev)?)
        } else {
            None
        };
        let mel = match &self.mel {
            Some(m) => {
                let frames = m.n_frames(self.input_samples);
                let flat: Vec<f32> = rows.iter().flat_map(|r| r.mel.clone().unwrap_or_default()).collect();
                Some(Tensor::from_vec(flat, (rows.len(), frames, m.n_mels()), &dev)?)
            }
            None => None,
        };
        let semantic = if self.variant.uses_semantic() {
            let b = backbone.ok_or_else(|| Error::precondition(format!("{} needs a semantic backbone", self.variant)))?;
            let crops: Vec<Waveform> = rows.iter().map(|r| r.crop.clone()).collect();
            Some(b.encode_batch(&crops)?.detach())
        } else {
            None
        };
        Ok(Inputs { wave, mel, semantic })
    }
}

/// Task datasets of every partition used by training and evaluation.
#[derive(Debug, Clone)]
pub struct TaskSplits {
    pub train: Dataset,
    pub dev: Dataset,
    /// Seen content, test fold, seen codecs.
    pub test_seen: Dataset,
    /// Unseen content, seen codecs.
    pub test_unseen: Dataset,
    /// Held-out codecs with the bona fide takes they were applied to.
    pub test_unseen_codec: Dataset,
}

impl TaskSplits {
    pub fn load(manifest: &CorpusManifest, task: Task) -> Result<Self> {
        let split = split_seen_unseen(manifest, manifest.config.id_threshold)?;
        let (train, dev) = train_dev(&split.train);
        let held_out_takes: BTreeSet<(u64, u64)> = manifest
            .records
            .iter()
            .filter(|r| r.unseen_codec)
            .map(|r| (r.utt_id, r.speaker_id))
            .collect();
        let codec_cell = manifest.filtered(|r| {
            r.unseen_codec || (r.is_bonafide() && held_out_takes.contains(&(r.utt_id, r.speaker_id)))
        });
        Ok(Self {
            train: Dataset::load(&train, task)?,
            dev: Dataset::load(&dev, task)?,
            test_seen: Dataset::load(&split.test_seen, task)?.filter(|r| !r.unseen_codec),
            test_unseen: Dataset::load(&split.test_unseen, task)?.filter(|r| !r.unseen_codec),
            test_unseen_codec: Dataset::load(&codec_cell, task)?,
        })
    }
}

//! Corpus generation: codec catalog, task-balanced sampling, rendering.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::codec::{CodecSim, CodecSimConfig};
use super::labels::{AuxKind, CodecProfile, DecKind, Task, TaxonomyLabel, VqKind};
use super::manifest::{CorpusManifest, Fold, UtteranceRecord, MANIFEST_FILE};
use super::synth::{synth_bonafide, SynthConfig};
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::{digest, exec, seed};

/// A named simulated codec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecSystem {
    pub name: String,
    pub profile: CodecProfile,
}

fn short(vq: VqKind, aux: AuxKind, dec: DecKind) -> String {
    let v = match vq {
        VqKind::MultiCodebook => "mvq",
        VqKind::SingleCodebook => "svq",
        VqKind::Scalar => "sq",
    };
    let a = match aux {
        AuxKind::None => "none",
        AuxKind::SemanticDistill => "sd",
        AuxKind::Disentangle => "dis",
    };
    let d = match dec {
        DecKind::TimeDomain => "time",
        DecKind::FreqDomain => "freq",
    };
    format!("{v}-{a}-{d}")
}

/// One system per taxonomy combination, with hash-derived strengths in
/// [0.6, 1.0].
pub fn default_catalog() -> Vec<CodecSystem> {
    let mut out = Vec::new();
    for vq in VqKind::ALL {
        for aux in AuxKind::ALL {
            for dec in DecKind::ALL {
                let name = short(vq, aux, dec);
                let u = (seed::hash_str(&name) >> 11) as f64 / (1u64 << 53) as f64;
                let strength = ((0.6 + 0.4 * u) * 100.0).round() / 100.0;
                out.push(CodecSystem {
                    name,
                    profile: CodecProfile::new(vq, aux, dec, strength.min(1.0)),
                });
            }
        }
    }
    out
}

/// Held out of training by default; every kind on every axis stays covered
/// by the remaining systems.
pub fn default_unseen() -> Vec<String> {
    ["svq-dis-freq", "sq-sd-time", "mvq-none-freq"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    /// Utterance ids run from 1 to `n_utts`.
    pub n_utts: u64,
    pub speakers_per_utt: u64,
    pub n_speakers: u64,
    /// Ranges (seconds) of the voiced duration and the silence margins.
    pub voiced_secs: (f64, f64),
    pub silence_head: (f64, f64),
    pub silence_tail: (f64, f64),
    /// Task whose classes are balanced: one spoof per spoof class per take.
    pub balance_task: Task,
    pub catalog: Vec<CodecSystem>,
    pub unseen_systems: Vec<String>,
    /// Utterance ids above this are unseen content.
    pub id_threshold: u64,
    pub dev_fraction: f64,
    pub test_fraction: f64,
    pub synth: SynthConfig,
    pub codec: CodecSimConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_utts: 60,
            speakers_per_utt: 2,
            n_speakers: 12,
            voiced_secs: (1.2, 1.8),
            silence_head: (0.05, 0.6),
            silence_tail: (0.05, 0.6),
            balance_task: Task::Vq,
            catalog: default_catalog(),
            unseen_systems: default_unseen(),
            id_threshold: 40,
            dev_fraction: 0.15,
            test_fraction: 0.2,
            synth: SynthConfig::default(),
            codec: CodecSimConfig::default(),
        }
    }
}

impl CorpusConfig {
    pub fn digest(&self) -> String {
        digest::json_digest(self)
    }

    pub fn validate(&self) -> Result<()> {
        let range_ok = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && 0.0 <= a && a <= b;
        if self.n_utts < 2 || self.speakers_per_utt == 0 || self.n_speakers < self.speakers_per_utt {
            return Err(Error::config(
                "need n_utts >= 2 and n_speakers >= speakers_per_utt >= 1",
            ));
        }
        if !(range_ok(self.voiced_secs) && self.voiced_secs.0 > 0.0)
            || !range_ok(self.silence_head)
            || !range_ok(self.silence_tail)
        {
            return Err(Error::config("duration ranges must be ordered and non-negative"));
        }
        if self.voiced_secs.1 + self.silence_head.1 + self.silence_tail.1 > 30.0 {
            return Err(Error::config("utterances may not exceed 30 s"));
        }
        if !(0.0..1.0).contains(&(self.dev_fraction + self.test_fraction)) {
            return Err(Error::config("dev + test fractions must lie in [0, 1)"));
        }
        for name in &self.unseen_systems {
            if !self.catalog.iter().any(|s| &s.name == name) {
                return Err(Error::config(format!("unseen system `{name}` not in catalog")));
            }
        }
        for class in 1..self.balance_task.n_classes() {
            if self.seen_systems_for(class).is_empty() {
                return Err(Error::config(format!(
                    "no seen system provides {} class `{}`",
                    self.balance_task,
                    self.balance_task.class_names()[class]
                )));
            }
        }
        Ok(())
    }

    fn is_unseen(&self, name: &str) -> bool {
        self.unseen_systems.iter().any(|n| n == name)
    }

    fn seen_systems_for(&self, class: usize) -> Vec<&CodecSystem> {
        self.catalog
            .iter()
            .filter(|s| !self.is_unseen(&s.name))
            .filter(|s| self.balance_task.class_of_profile(&s.profile) == Some(class))
            .collect()
    }
}

/// One (utterance, speaker) pair with its silence and fold draws.
#[derive(Debug, Clone, Copy)]
struct Take {
    index: u64,
    utt_id: u64,
    speaker_id: u64,
    head: f64,
    tail: f64,
    duration: f64,
    fold: Fold,
}

fn round_ms(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn takes(cfg: &CorpusConfig, seed_root: u64) -> Vec<Take> {
    let mut out = Vec::new();
    for utt_id in 1..=cfg.n_utts {
        let mut spk_rng = seed::rng(seed_root, "speakers", &[utt_id]);
        let mut speakers: Vec<u64> = Vec::new();
        while (speakers.len() as u64) < cfg.speakers_per_utt {
            let s = spk_rng.random_range(0..cfg.n_speakers);
            if !speakers.contains(&s) {
                speakers.push(s);
            }
        }
        for speaker_id in speakers {
            let mut rng = seed::rng(seed_root, "take", &[utt_id, speaker_id]);
            let draw = |rng: &mut rand_chacha::ChaCha8Rng, (a, b): (f64, f64)| {
                round_ms(if b > a { rng.random_range(a..=b) } else { a })
            };
            let voiced = draw(&mut rng, cfg.voiced_secs);
            let head = draw(&mut rng, cfg.silence_head);
            let tail = draw(&mut rng, cfg.silence_tail);
            let u: f64 = rng.random();
            let fold = if u < cfg.test_fraction {
                Fold::Test
            } else if u < cfg.test_fraction + cfg.dev_fraction {
                Fold::Dev
            } else {
                Fold::Train
            };
            out.push(Take {
                index: out.len() as u64,
                utt_id,
                speaker_id,
                head,
                tail,
                duration: round_ms(voiced + head + tail),
                fold,
            });
        }
    }
    out
}

/// Records of one take: the bona fide original followed by its codec twins.
fn take_records(cfg: &CorpusConfig, t: &Take) -> Vec<UtteranceRecord> {
    let stem = format!("u{:05}_s{:03}", t.utt_id, t.speaker_id);
    let make = |system: Option<&CodecSystem>, unseen: bool| {
        let (key, label) = match system {
            None => (format!("{stem}_bonafide"), TaxonomyLabel::bonafide()),
            Some(s) => (
                format!("{stem}_{}", s.name),
                TaxonomyLabel::from_profile(&s.profile),
            ),
        };
        UtteranceRecord {
            path: format!("wav/{key}.wav"),
            key,
            utt_id: t.utt_id,
            speaker_id: t.speaker_id,
            label,
            system: system.map(|s| s.name.clone()),
            profile: system.map(|s| s.profile),
            unseen_codec: unseen,
            silence_head: t.head,
            silence_tail: t.tail,
            duration: t.duration,
            fold: t.fold,
        }
    };
    let mut out = vec![make(None, false)];
    for class in 1..cfg.balance_task.n_classes() {
        let pool = cfg.seen_systems_for(class);
        let sys = pool[((t.index + class as u64) % pool.len() as u64) as usize];
        out.push(make(Some(sys), false));
    }
    let held_out_take = t.fold == Fold::Test || t.utt_id > cfg.id_threshold;
    if held_out_take {
        for sys in cfg.catalog.iter().filter(|s| cfg.is_unseen(&s.name)) {
            if cfg.balance_task.class_of_profile(&sys.profile).is_some() {
                out.push(make(Some(sys), true));
            }
        }
    }
    out
}

/// Deterministic record list for a configuration, without rendering audio.
pub fn plan_corpus(cfg: &CorpusConfig, seed_root: u64) -> Result<Vec<UtteranceRecord>> {
    cfg.validate()?;
    Ok(takes(cfg, seed_root)
        .iter()
        .flat_map(|t| take_records(cfg, t))
        .collect())
}

/// Renders the bona fide waveform of a record's take.
pub fn render_bonafide(cfg: &CorpusConfig, seed_root: u64, r: &UtteranceRecord) -> Result<Waveform> {
    let w = synth_bonafide(
        r.utt_id,
        r.speaker_id,
        r.duration,
        r.silence_head,
        r.silence_tail,
        seed::substream(seed_root, "synth", &[r.utt_id, r.speaker_id]),
        &cfg.synth,
    )?;
    Ok(w.quantized_pcm16())
}

/// Renders one record exactly as `build_corpus` stores it.
pub fn render_record(cfg: &CorpusConfig, seed_root: u64, r: &UtteranceRecord) -> Result<Waveform> {
    let bona = render_bonafide(cfg, seed_root, r)?;
    match (&r.profile, &r.system) {
        (Some(p), Some(name)) => {
            let sim = CodecSim::new(cfg.synth.sample_rate, cfg.codec.clone())?;
            let codec_seed = seed::substream(seed_root, "codec", &[r.utt_id, r.speaker_id, seed::hash_str(name)]);
            Ok(sim.apply(&bona, p, codec_seed)?.quantized_pcm16())
        }
        _ => Ok(bona),
    }
}

/// Generates the corpus under `out_dir` (WAVs in `wav/`, plus the manifest).
pub fn build_corpus(cfg: &CorpusConfig, seed_root: u64, out_dir: &Path) -> Result<CorpusManifest> {
    let records = plan_corpus(cfg, seed_root)?;
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let sim = CodecSim::new(cfg.synth.sample_rate, cfg.codec.clone())?;

    // Group records by take: the bona fide record leads each group.
    let mut groups: Vec<&[UtteranceRecord]> = Vec::new();
    let mut start = 0;
    for i in 1..=records.len() {
        if i == records.len() || records[i].is_bonafide() {
            groups.push(&records[start..i]);
            start = i;
        }
    }
    exec::try_map(&groups, |group| -> Result<()> {
        let bona = render_bonafide(cfg, seed_root, &group[0])?;
        bona.write_wav(&out_dir.join(&group[0].path))?;
        for r in &group[1..] {
            let (p, name) = (r.profile.as_ref().unwrap(), r.system.as_ref().unwrap());
            let codec_seed = seed::substream(seed_root, "codec", &[r.utt_id, r.speaker_id, seed::hash_str(name)]);
            let w = sim.apply(&bona, p, codec_seed)?;
            w.write_wav(&out_dir.join(&r.path))?;
        }
        Ok(())
    })?;

    let manifest = CorpusManifest {
        records,
        config: cfg.clone(),
        seed: seed_root,
        root: out_dir.to_path_buf(),
    };
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

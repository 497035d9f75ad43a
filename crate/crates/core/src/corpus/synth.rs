//! Deterministic pseudo-speech: a harmonic source with an utterance-keyed
//! pitch/formant trajectory and speaker-keyed timbre, framed by silence.
//!
//! Content is rendered on a timeline that starts at voice onset, so two
//! renders of the same utterance share every voiced sample they have in
//! common regardless of the silence around them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::{from_dbfs, Waveform};
use crate::error::{Error, Result};
use crate::seed;

/// Root of the content/speaker substreams; independent of any run seed.
const CONTENT_ROOT: u64 = 0x5EED_C0DE;
const CONTROL_BLOCK: usize = 40;
const FADE_SECS: f64 = 0.010;
const MAX_DURATION_SECS: f64 = 30.0;
const MAX_HARMONIC_HZ: f64 = 5_000.0;

/// (F1, F2, F3) in Hz.
const VOWELS: [[f64; 3]; 8] = [
    [270.0, 2290.0, 3010.0],
    [390.0, 1990.0, 2550.0],
    [530.0, 1840.0, 2480.0],
    [660.0, 1720.0, 2410.0],
    [730.0, 1090.0, 2440.0],
    [570.0, 840.0, 2410.0],
    [440.0, 1020.0, 2240.0],
    [300.0, 870.0, 2240.0],
];
const BANDWIDTHS: [f64; 3] = [70.0, 100.0, 140.0];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SynthConfig {
    pub sample_rate: u32,
    /// RMS level of the white noise placed in silent segments, in dBFS.
    /// `None` gives exact-zero silence.
    pub noise_floor_db: Option<f64>,
    /// Voice level (RMS of the harmonic part, linear).
    pub voice_rms: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sample_rate: crate::audio::DEFAULT_SAMPLE_RATE,
            noise_floor_db: Some(-80.0),
            voice_rms: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
struct Syllable {
    start: f64,
    dur: f64,
    vowel: usize,
    pitch_mult: f64,
    loudness: f64,
    /// Fricative onset: (duration s, centre Hz, noise seed).
    onset: Option<(f64, f64, u64)>,
}

/// Utterance-keyed syllable plan covering `min_secs` of voice.
fn content_plan(utt_id: u64, min_secs: f64) -> Vec<Syllable> {
    let mut rng = seed::rng(CONTENT_ROOT, "content", &[utt_id]);
    let mut out = Vec::new();
    let mut t = 0.0;
    let mut i = 0u64;
    while t < min_secs + 0.5 {
        let dur = rng.random_range(0.12..0.28);
        let onset = if rng.random_bool(0.45) {
            Some((
                rng.random_range(0.03..0.06),
                rng.random_range(2_000.0..6_000.0),
                seed::substream(CONTENT_ROOT, "burst", &[utt_id, i]),
            ))
        } else {
            None
        };
        out.push(Syllable {
            start: t,
            dur,
            vowel: rng.random_range(0..VOWELS.len()),
            pitch_mult: rng.random_range(0.85..1.2),
            loudness: rng.random_range(0.7..1.0),
            onset,
        });
        t += dur;
        i += 1;
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Speaker {
    f0: f64,
    formant_scale: f64,
    tilt_db_per_octave: f64,
}

fn speaker_timbre(speaker_id: u64) -> Speaker {
    let mut rng = seed::rng(CONTENT_ROOT, "speaker", &[speaker_id]);
    Speaker {
        f0: rng.random_range(95.0..210.0),
        formant_scale: rng.random_range(0.9..1.15),
        tilt_db_per_octave: rng.random_range(-9.0..-4.0),
    }
}

fn syllable_at(plan: &[Syllable], t: f64) -> usize {
    match plan.binary_search_by(|s| s.start.partial_cmp(&t).unwrap()) {
        Ok(i) => i,
        Err(i) => i.saturating_sub(1),
    }
}

/// Smoothly interpolated per-syllable quantity at time `t`.
fn glide(plan: &[Syllable], t: f64, value: impl Fn(&Syllable) -> f64, transition: f64) -> f64 {
    let i = syllable_at(plan, t);
    let s = &plan[i];
    let cur = value(s);
    if i == 0 {
        return cur;
    }
    let since = t - s.start;
    if since >= transition {
        return cur;
    }
    let prev = value(&plan[i - 1]);
    let a = 0.5 - 0.5 * (std::f64::consts::PI * since / transition).cos();
    prev + (cur - prev) * a
}

fn resonator_gain(f: f64, fc: f64, bw: f64) -> f64 {
    let r = f / fc;
    1.0 / ((1.0 - r * r).powi(2) + (f * bw / (fc * fc)).powi(2)).sqrt()
}

/// Renders `n` voiced samples of `utt_id` spoken by `speaker_id`.
fn render_voice(utt_id: u64, speaker_id: u64, n: usize, cfg: &SynthConfig) -> Vec<f64> {
    let sr = f64::from(cfg.sample_rate);
    let plan = content_plan(utt_id, n as f64 / sr);
    let spk = speaker_timbre(speaker_id);
    let mut out = vec![0.0; n];

    // Harmonic part, control-rate amplitudes, per-sample phase.
    let f0_at = |t: f64| {
        let mult = glide(&plan, t, |s| s.pitch_mult, 0.06);
        let declination = 1.0 - 0.05 * t;
        let vibrato = 1.0 + 0.01 * (2.0 * std::f64::consts::PI * 5.0 * t).sin();
        spk.f0 * mult * declination * vibrato
    };
    let mut phase = 0.0f64;
    let mut amps: Vec<f64> = Vec::new();
    let mut block_start = 0;
    while block_start < n {
        let block_end = (block_start + CONTROL_BLOCK).min(n);
        let t0 = block_start as f64 / sr;
        let f0_0 = f0_at(t0);
        let f0_1 = f0_at(block_end as f64 / sr);
        let formants: Vec<f64> = (0..3)
            .map(|j| glide(&plan, t0, |s| VOWELS[s.vowel][j], 0.04) * spk.formant_scale)
            .collect();
        let n_harm = ((MAX_HARMONIC_HZ / f0_0).floor() as usize).max(1);
        amps.clear();
        for h in 1..=n_harm {
            let f = h as f64 * f0_0;
            let tilt = 10f64.powf(spk.tilt_db_per_octave * (f / f0_0).log2() / 20.0);
            let res: f64 = (0..3)
                .map(|j| resonator_gain(f, formants[j], BANDWIDTHS[j]))
                .product();
            amps.push(tilt * res);
        }
        let norm = amps.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        let syl = &plan[syllable_at(&plan, t0)];
        let within = t0 - syl.start;
        let attack = (within / 0.02).min(1.0);
        let release = ((syl.dur - within) / 0.03).clamp(0.0, 1.0).max(0.15);
        let voiced = syl.onset.map_or(true, |(d, _, _)| within >= d * 0.6);
        let level = if voiced {
            cfg.voice_rms * std::f64::consts::SQRT_2 * syl.loudness * attack * release / norm
        } else {
            0.0
        };
        for (k, i) in (block_start..block_end).enumerate() {
            let frac = k as f64 / CONTROL_BLOCK as f64;
            let f0 = f0_0 + (f0_1 - f0_0) * frac;
            phase = (phase + 2.0 * std::f64::consts::PI * f0 / sr) % (2.0 * std::f64::consts::PI);
            if level == 0.0 {
                continue;
            }
            // sin(h*phase) by the Chebyshev recurrence.
            let c2 = 2.0 * phase.cos();
            let (mut s_prev, mut s_cur) = (0.0, phase.sin());
            let mut acc = 0.0;
            for a in &amps {
                acc += a * s_cur;
                let s_next = c2 * s_cur - s_prev;
                s_prev = s_cur;
                s_cur = s_next;
            }
            out[i] = acc * level;
        }
        block_start = block_end;
    }

    // Fricative onsets: resonant-filtered noise bursts.
    for syl in &plan {
        let Some((dur, fc, burst_seed)) = syl.onset else {
            continue;
        };
        let start = (syl.start * sr).round() as usize;
        if start >= n {
            break;
        }
        let len = ((dur * sr) as usize).min(n - start);
        let mut rng = ChaCha8Rng::seed_from_u64(burst_seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let r = (-std::f64::consts::PI * 800.0 / sr).exp();
        let theta = 2.0 * std::f64::consts::PI * fc / sr;
        let (a1, a2) = (2.0 * r * theta.cos(), -r * r);
        let gain = (1.0 - r) * 2.0;
        let (mut y1, mut y2) = (0.0, 0.0);
        for k in 0..len {
            let x: f64 = normal.sample(&mut rng);
            let y = gain * x + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            let env = (std::f64::consts::PI * k as f64 / len as f64).sin();
            out[start + k] += y * env * cfg.voice_rms * 0.6 * syl.loudness;
        }
    }
    out
}

fn samples_for(secs: f64, sr: f64) -> usize {
    (secs * sr).round() as usize
}

/// Synthesizes one bona fide utterance.
///
/// Content depends only on `utt_id`, timbre only on `speaker_id`; `rng_seed`
/// drives the silence noise floor.
pub fn synth_bonafide(
    utt_id: u64,
    speaker_id: u64,
    duration: f64,
    silence_head: f64,
    silence_tail: f64,
    rng_seed: u64,
    cfg: &SynthConfig,
) -> Result<Waveform> {
    if !(silence_head >= 0.0 && silence_tail >= 0.0) {
        return Err(Error::precondition("silence lengths must be non-negative"));
    }
    if !(duration > silence_head + silence_tail) {
        return Err(Error::precondition(format!(
            "duration {duration} s must exceed head+tail silence {} s",
            silence_head + silence_tail
        )));
    }
    if duration > MAX_DURATION_SECS {
        return Err(Error::precondition(format!(
            "duration {duration} s exceeds {MAX_DURATION_SECS} s"
        )));
    }
    let sr = f64::from(cfg.sample_rate);
    let total = samples_for(duration, sr);
    let head = samples_for(silence_head, sr);
    let tail = samples_for(silence_tail, sr);
    let voiced_len = total.saturating_sub(head + tail);
    if voiced_len == 0 {
        return Err(Error::precondition("voiced region rounds to zero samples"));
    }
    let mut voice = render_voice(utt_id, speaker_id, voiced_len, cfg);
    let fade = samples_for(FADE_SECS, sr).min(voiced_len / 2);
    for k in 0..fade {
        let g = 0.5 - 0.5 * (std::f64::consts::PI * k as f64 / fade as f64).cos();
        voice[k] *= g;
        voice[voiced_len - 1 - k] *= g;
    }

    let mut samples = vec![0.0f64; total];
    samples[head..head + voiced_len].copy_from_slice(&voice);
    if let Some(db) = cfg.noise_floor_db {
        let mut rng = seed::rng(rng_seed, "noise_floor", &[utt_id, speaker_id]);
        let normal = Normal::new(0.0, from_dbfs(db)).map_err(|e| Error::config(e.to_string()))?;
        let (lead, rest) = samples.split_at_mut(head);
        for s in lead.iter_mut().chain(rest[voiced_len..].iter_mut()) {
            *s = normal.sample(&mut rng);
        }
    }
    Waveform::from_f64(&samples, cfg.sample_rate)
}

/// Number of voiced samples `synth_bonafide` renders for these arguments.
pub fn voiced_samples(duration: f64, silence_head: f64, silence_tail: f64, sample_rate: u32) -> usize {
    let sr = f64::from(sample_rate);
    samples_for(duration, sr).saturating_sub(samples_for(silence_head, sr) + samples_for(silence_tail, sr))
}

//! Codec simulation: spectral-envelope quantizers plus auxiliary-objective and
//! decoder-domain artifacts, all blended in by a single strength knob.

use std::f64::consts::PI;

use rand::Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::labels::{AuxKind, CodecProfile, DecKind, VqKind};
use crate::audio::{from_dbfs, Waveform};
use crate::dsp::{sqrt_hann_periodic, MelFilterbank, Spectrum, Stft};
use crate::error::{Error, Result};
use crate::seed;

pub const N_BANDS: usize = 16;
const DB_EPS: f64 = 1e-12;

/// One frame's log-band envelope in dB (per-sample power units).
pub type Envelope = [f64; N_BANDS];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecSimConfig {
    pub n_fft: usize,
    pub hop: usize,
    /// Levels of the scalar quantizer per coefficient.
    pub sq_levels: usize,
    /// Lowest representable level of each quantizer family, dB.
    pub sq_floor_db: f64,
    pub svq_floor_db: f64,
    pub mvq_floor_db: f64,
    pub ceiling_db: f64,
    pub svq_gain_levels: usize,
    pub mvq_gain_levels: usize,
    /// Moving-average length (frames) of the semantic-distillation smoother.
    pub sd_smooth_frames: usize,
    /// Relative fine-structure detune of the disentanglement recombination.
    pub dis_detune: f64,
    /// Soft-clip drive of the time-domain decoder at strength 1.
    pub time_drive: f64,
    /// Level of the upsampling tones left by the time-domain decoder, dBFS.
    pub time_tone_db: f64,
    pub griffin_lim_iters: usize,
}

impl Default for CodecSimConfig {
    fn default() -> Self {
        Self {
            n_fft: 512,
            hop: 128,
            sq_levels: 12,
            sq_floor_db: -62.0,
            svq_floor_db: -86.0,
            mvq_floor_db: -82.0,
            ceiling_db: -6.0,
            svq_gain_levels: 24,
            mvq_gain_levels: 48,
            sd_smooth_frames: 7,
            dis_detune: 0.03,
            time_drive: 4.0,
            time_tone_db: -62.0,
            griffin_lim_iters: 8,
        }
    }
}

fn uniform_quantize(v: f64, lo: f64, hi: f64, levels: usize) -> f64 {
    if levels < 2 {
        return lo;
    }
    let step = (hi - lo) / (levels - 1) as f64;
    lo + ((v.clamp(lo, hi) - lo) / step).round() * step
}

fn nearest<'a>(v: &Envelope, book: &'a [Envelope]) -> &'a Envelope {
    book.iter()
        .min_by(|a, b| sq_dist(v, a).partial_cmp(&sq_dist(v, b)).unwrap())
        .expect("non-empty codebook")
}

fn sq_dist(a: &Envelope, b: &Envelope) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean(v: &Envelope) -> f64 {
    v.iter().sum::<f64>() / N_BANDS as f64
}

/// Linear interpolation of `ys` sampled at increasing `xs`, clamped at the ends.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let i = xs.partition_point(|&c| c <= x) - 1;
    let a = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + a * (ys[i + 1] - ys[i])
}

fn wrap_phase(p: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    p - tau * ((p + std::f64::consts::PI) / tau).floor()
}

/// A configured codec simulator for one sample rate.
#[derive(Debug, Clone)]
pub struct CodecSim {
    cfg: CodecSimConfig,
    sample_rate: u32,
    stft: Stft,
    bands: MelFilterbank,
    /// Band centres in bin units.
    centers_bin: Vec<f64>,
    window_energy: f64,
    shape_book: Vec<Envelope>,
    residual_book: Vec<Envelope>,
}

impl CodecSim {
    pub fn new(sample_rate: u32, cfg: CodecSimConfig) -> Result<Self> {
        if cfg.hop == 0 || cfg.n_fft < 2 * cfg.hop || cfg.sq_levels < 2 {
            return Err(Error::config("codec sim needs n_fft >= 2*hop and sq_levels >= 2"));
        }
        let window = sqrt_hann_periodic(cfg.n_fft);
        let window_energy = window.iter().map(|w| w * w).sum();
        let stft = Stft::new(cfg.n_fft, cfg.hop, window);
        let nyquist = f64::from(sample_rate) / 2.0;
        let bands = MelFilterbank::new(sample_rate, cfg.n_fft, N_BANDS, 0.0, nyquist, true);
        let bin_hz = f64::from(sample_rate) / cfg.n_fft as f64;
        let centers_bin = bands.centers_hz().iter().map(|c| c / bin_hz).collect();
        let shape_book = formant_shape_book(bands.centers_hz());
        let residual_book = residual_book();
        Ok(Self {
            cfg,
            sample_rate,
            stft,
            bands,
            centers_bin,
            window_energy,
            shape_book,
            residual_book,
        })
    }

    pub fn config(&self) -> &CodecSimConfig {
        &self.cfg
    }

    /// Per-frame log-band envelopes of a spectrum.
    pub fn envelopes(&self, spec: &Spectrum) -> Vec<Envelope> {
        spec.frames
            .iter()
            .map(|frame| {
                let power: Vec<f64> = frame
                    .iter()
                    .map(|c| c.norm_sqr() / self.window_energy)
                    .collect();
                let b = self.bands.apply(&power);
                let mut e = [0.0; N_BANDS];
                for (o, p) in e.iter_mut().zip(b) {
                    *o = 10.0 * (p + DB_EPS).log10();
                }
                e
            })
            .collect()
    }

    /// Quantizes one envelope with the given family, ignoring strength.
    pub fn quantize(&self, kind: VqKind, v: &Envelope) -> Envelope {
        let c = &self.cfg;
        match kind {
            VqKind::Scalar => {
                let mut out = *v;
                for x in out.iter_mut() {
                    *x = uniform_quantize(*x, c.sq_floor_db, c.ceiling_db, c.sq_levels);
                }
                out
            }
            VqKind::SingleCodebook | VqKind::MultiCodebook => {
                let (floor, levels) = if kind == VqKind::SingleCodebook {
                    (c.svq_floor_db, c.svq_gain_levels)
                } else {
                    (c.mvq_floor_db, c.mvq_gain_levels)
                };
                let gain = mean(v);
                let mut shape = *v;
                shape.iter_mut().for_each(|x| *x -= gain);
                let q_gain = uniform_quantize(gain, floor, c.ceiling_db, levels);
                let first = *nearest(&shape, &self.shape_book);
                let mut q_shape = first;
                if kind == VqKind::MultiCodebook {
                    let mut resid = shape;
                    resid.iter_mut().zip(&first).for_each(|(r, f)| *r -= f);
                    let second = nearest(&resid, &self.residual_book);
                    q_shape.iter_mut().zip(second).for_each(|(q, s)| *q += s);
                }
                let mut out = q_shape;
                out.iter_mut().for_each(|x| *x += q_gain);
                out
            }
        }
    }

    /// Applies the codec simulation. Output has the input's length.
    pub fn apply(&self, x: &Waveform, profile: &CodecProfile, rng_seed: u64) -> Result<Waveform> {
        let s = profile.strength;
        if !(s.is_finite() && s > 0.0 && s <= 1.0) {
            return Err(Error::precondition(format!("strength {s} outside (0, 1]")));
        }
        if x.sample_rate() != self.sample_rate {
            return Err(Error::precondition(format!(
                "sample rate {} does not match codec sim rate {}",
                x.sample_rate(),
                self.sample_rate
            )));
        }
        let input = x.to_f64();
        let mut spec = self.stft.analyze(&input);
        let env_in = self.envelopes(&spec);

        // Quantized and (for semantic distillation) smoothed target envelope.
        let mut target: Vec<Envelope> = env_in
            .iter()
            .map(|v| {
                let q = self.quantize(profile.vq, v);
                let mut t = *v;
                t.iter_mut().zip(&q).for_each(|(a, b)| *a += s * (b - *a));
                t
            })
            .collect();
        if profile.aux == AuxKind::SemanticDistill {
            let smooth = moving_average(&target, self.cfg.sd_smooth_frames);
            for (t, m) in target.iter_mut().zip(&smooth) {
                t.iter_mut().zip(m).for_each(|(a, b)| *a += s * (b - *a));
            }
        }

        let n_bins = self.stft.n_bins();
        let rho = 1.0 + s * self.cfg.dis_detune;
        let mut magnitudes: Vec<Vec<f64>> = Vec::with_capacity(spec.frames.len());
        for ((frame, e_in), e_t) in spec.frames.iter_mut().zip(&env_in).zip(&target) {
            let gain_db: Vec<f64> = e_in.iter().zip(e_t).map(|(a, b)| b - a).collect();
            let mut mag: Vec<f64> = (0..n_bins)
                .map(|k| {
                    let g = 10f64.powf(interp(&self.centers_bin, &gain_db, k as f64) / 20.0);
                    frame[k].norm() * g
                })
                .collect();
            if profile.aux == AuxKind::Disentangle {
                // Keep the target envelope, detune the fine structure under it.
                let env: Vec<f64> = (0..n_bins)
                    .map(|k| 10f64.powf(interp(&self.centers_bin, e_t, k as f64) / 20.0))
                    .collect();
                let fine: Vec<f64> = mag.iter().zip(&env).map(|(m, e)| m / e).collect();
                for k in 0..n_bins {
                    let src = k as f64 / rho;
                    let i = src.floor() as usize;
                    let a = src - i as f64;
                    let f = fine[i] * (1.0 - a) + fine.get(i + 1).copied().unwrap_or(0.0) * a;
                    mag[k] = env[k] * f;
                }
            }
            for (c, &m) in frame.iter_mut().zip(&mag) {
                let n = c.norm();
                *c = if n > 0.0 { *c * (m / n) } else { Complex64::new(m, 0.0) };
            }
            magnitudes.push(mag);
        }

        if profile.dec == DecKind::FreqDomain {
            let gl = self.griffin_lim(&magnitudes, spec.signal_len, rng_seed);
            for (frame, gl_frame) in spec.frames.iter_mut().zip(&gl.frames) {
                for (c, g) in frame.iter_mut().zip(gl_frame) {
                    let (m, p) = c.to_polar();
                    let d = wrap_phase(g.arg() - p);
                    *c = Complex64::from_polar(m, p + s * d);
                }
            }
        }

        let mut y = self.stft.synthesize(&spec);

        if profile.dec == DecKind::TimeDomain {
            let g = s * self.cfg.time_drive;
            if g > 0.0 {
                for v in y.iter_mut() {
                    *v = (g * *v).tanh() / g;
                }
            }
            let amp = s * from_dbfs(self.cfg.time_tone_db);
            let sr = f64::from(self.sample_rate);
            for (n, v) in y.iter_mut().enumerate() {
                let t = n as f64 / sr;
                let tau = std::f64::consts::TAU;
                *v += amp * ((tau * sr / 4.0 * t).sin() + (tau * 3.0 * sr / 8.0 * t).sin()) / 2.0;
            }
        }
        Waveform::from_f64(&y, self.sample_rate)
    }

    fn griffin_lim(&self, magnitudes: &[Vec<f64>], len: usize, rng_seed: u64) -> Spectrum {
        let mut rng = seed::rng(rng_seed, "griffin_lim", &[]);
        let mut spec = Spectrum {
            frames: magnitudes
                .iter()
                .map(|m| {
                    m.iter()
                        .map(|&a| Complex64::from_polar(a, rng.random_range(-PI..PI)))
                        .collect()
                })
                .collect(),
            signal_len: len,
        };
        for _ in 0..self.cfg.griffin_lim_iters {
            let y = self.stft.synthesize(&spec);
            let re = self.stft.analyze(&y);
            for ((frame, m), r) in spec.frames.iter_mut().zip(magnitudes).zip(&re.frames) {
                for ((c, &a), z) in frame.iter_mut().zip(m).zip(r) {
                    *c = Complex64::from_polar(a, z.arg());
                }
            }
        }
        spec
    }

    /// Root-mean-square difference of the band envelopes (dB, floored at
    /// -100 dB) of two equal-length signals.
    pub fn log_spectral_distance(&self, a: &Waveform, b: &Waveform) -> f64 {
        let ea = self.envelopes(&self.stft.analyze(&a.to_f64()));
        let eb = self.envelopes(&self.stft.analyze(&b.to_f64()));
        let mut acc = 0.0;
        let mut n = 0usize;
        for (fa, fb) in ea.iter().zip(&eb) {
            for (x, y) in fa.iter().zip(fb) {
                let d = x.max(-100.0) - y.max(-100.0);
                acc += d * d;
                n += 1;
            }
        }
        (acc / n.max(1) as f64).sqrt()
    }
}

fn moving_average(v: &[Envelope], len: usize) -> Vec<Envelope> {
    let half = len / 2;
    (0..v.len())
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(v.len());
            let mut acc = [0.0; N_BANDS];
            for e in &v[lo..hi] {
                acc.iter_mut().zip(e).for_each(|(a, b)| *a += b);
            }
            acc.iter_mut().for_each(|a| *a /= (hi - lo) as f64);
            acc
        })
        .collect()
}

/// First-stage shape codebook: mean-removed band envelopes of vowel-like
/// resonator cascades under two spectral tilts.
fn formant_shape_book(centers_hz: &[f64]) -> Vec<Envelope> {
    const FORMANTS: [[f64; 3]; 8] = [
        [270.0, 2290.0, 3010.0],
        [390.0, 1990.0, 2550.0],
        [530.0, 1840.0, 2480.0],
        [660.0, 1720.0, 2410.0],
        [730.0, 1090.0, 2440.0],
        [570.0, 840.0, 2410.0],
        [440.0, 1020.0, 2240.0],
        [300.0, 870.0, 2240.0],
    ];
    const BW: [f64; 3] = [80.0, 110.0, 160.0];
    let mut book = Vec::new();
    for tilt in [-3.0, -9.0] {
        for f in &FORMANTS {
            let mut e = [0.0; N_BANDS];
            for (b, &c) in centers_hz.iter().enumerate() {
                let mut db = tilt * (c.max(100.0) / 100.0).log2();
                for j in 0..3 {
                    let r = c / f[j];
                    let h = 1.0 / ((1.0 - r * r).powi(2) + (c * BW[j] / (f[j] * f[j])).powi(2));
                    db += 10.0 * h.log10();
                }
                e[b] = db;
            }
            let m = mean(&e);
            e.iter_mut().for_each(|x| *x -= m);
            book.push(e);
        }
    }
    book
}

/// Residual codebook: the zero codeword plus signed cosine ripples.
fn residual_book() -> Vec<Envelope> {
    let mut book = vec![[0.0; N_BANDS]];
    for k in 1..=7 {
        for amp in [2.0, 5.0] {
            for sign in [1.0, -1.0] {
                let mut e = [0.0; N_BANDS];
                for (b, x) in e.iter_mut().enumerate() {
                    *x = sign
                        * amp
                        * (std::f64::consts::PI * k as f64 * (b as f64 + 0.5) / N_BANDS as f64).cos();
                }
                book.push(e);
            }
        }
    }
    book
}

/// Applies a codec simulation with the default configuration.
pub fn apply_codec_sim(x: &Waveform, profile: &CodecProfile, rng_seed: u64) -> Result<Waveform> {
    CodecSim::new(x.sample_rate(), CodecSimConfig::default())?.apply(x, profile, rng_seed)
}

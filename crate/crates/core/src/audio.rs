//! Mono PCM waveforms and 16-bit WAV persistence.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sample rate of the whole pipeline.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// A mono waveform. Samples are finite and non-empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::precondition("waveform must not be empty"));
        }
        if sample_rate == 0 {
            return Err(Error::precondition("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::precondition(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Builds a waveform from double-precision samples, clamping to [-1, 1].
    pub fn from_f64(samples: &[f64], sample_rate: u32) -> Result<Self> {
        Self::new(
            samples.iter().map(|&s| s.clamp(-1.0, 1.0) as f32).collect(),
            sample_rate,
        )
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| f64::from(s)).collect()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    /// Sub-range `[start, end)` as a new waveform.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.samples.len() {
            return Err(Error::precondition(format!(
                "invalid slice {start}..{end} of {} samples",
                self.samples.len()
            )));
        }
        Self::new(self.samples[start..end].to_vec(), self.sample_rate)
    }

    /// Writes 16-bit PCM mono RIFF/WAV.
    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let wav_err = |source| Error::Wav {
            path: path.to_path_buf(),
            source,
        };
        let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
        for &s in &self.samples {
            w.write_sample(quantize_i16(s)).map_err(wav_err)?;
        }
        w.finalize().map_err(wav_err)
    }

    /// Reads a mono 16-bit PCM WAV written by [`Waveform::write_wav`].
    pub fn read_wav(path: &Path) -> Result<Self> {
        let wav_err = |source| Error::Wav {
            path: path.to_path_buf(),
            source,
        };
        let mut r = hound::WavReader::open(path).map_err(wav_err)?;
        let spec = r.spec();
        if spec.channels != 1 || spec.bits_per_sample != 16 {
            return Err(Error::Schema {
                context: path.display().to_string(),
                field: "channels/bits_per_sample".into(),
            });
        }
        let samples = r
            .samples::<i16>()
            .map(|s| s.map(|v| f32::from(v) / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(wav_err)?;
        Self::new(samples, spec.sample_rate)
    }

    /// The waveform after a 16-bit PCM round trip (what a reader of the WAV sees).
    pub fn quantized_pcm16(&self) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|&s| f32::from(quantize_i16(s)) / 32768.0)
                .collect(),
            sample_rate: self.sample_rate,
        }
    }
}

fn quantize_i16(s: f32) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Root mean square of a sample slice (0 for an empty slice).
pub fn rms(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let e: f64 = samples.iter().map(|&s| f64::from(s) * f64::from(s)).sum();
    (e / samples.len() as f64).sqrt()
}

/// Amplitude ratio to dBFS; `-inf` for silence.
pub fn to_dbfs(amplitude: f64) -> f64 {
    if amplitude <= 0.0 {
        f64::NEG_INFINITY
    } else {
        20.0 * amplitude.log10()
    }
}

pub fn from_dbfs(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

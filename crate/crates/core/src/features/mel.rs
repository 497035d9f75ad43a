//! Log-mel spectrograms.

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::dsp::{hann_periodic, MelFilterbank, Stft};
use crate::error::{Error, Result};

pub const LOG_EPS: f64 = 1e-6;

/// Row-major `frames × bins` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f32>,
}

impl Spectrogram {
    pub fn new(frames: usize, bins: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != frames * bins {
            return Err(Error::shape(format!(
                "{} values for a {frames}x{bins} spectrogram",
                data.len()
            )));
        }
        Ok(Self { frames, bins, data })
    }

    pub fn get(&self, t: usize, f: usize) -> f32 {
        self.data[t * self.bins + f]
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }
}

/// A planned log-mel front end: Hann-windowed power STFT, triangular mel
/// filterbank over 0..Nyquist, natural log with an epsilon floor.
#[derive(Debug, Clone)]
pub struct LogMel {
    stft: Stft,
    bank: MelFilterbank,
    sample_rate: u32,
}

impl LogMel {
    pub fn new(sample_rate: u32, n_fft: usize, hop: usize, n_mels: usize) -> Result<Self> {
        if hop == 0 || n_fft < hop {
            return Err(Error::precondition(format!("need n_fft >= hop > 0, got {n_fft}/{hop}")));
        }
        if n_mels == 0 || n_mels > n_fft / 2 {
            return Err(Error::precondition(format!("n_mels {n_mels} must be in 1..={}", n_fft / 2)));
        }
        Ok(Self {
            stft: Stft::new(n_fft, hop, hann_periodic(n_fft)),
            bank: MelFilterbank::new(sample_rate, n_fft, n_mels, 0.0, f64::from(sample_rate) / 2.0, false),
            sample_rate,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.bank.n_mels()
    }

    /// Frames produced for an input of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        (len / self.stft.hop()).max(1)
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    pub fn compute(&self, x: &Waveform) -> Result<Spectrogram> {
        if x.sample_rate() != self.sample_rate {
            return Err(Error::precondition(format!(
                "sample rate {} does not match front end rate {}",
                x.sample_rate(),
                self.sample_rate
            )));
        }
        let frames = self.stft.power_frames(&x.to_f64());
        let n = frames.len();
        let mut data = Vec::with_capacity(n * self.n_mels());
        for p in &frames {
            data.extend(self.bank.apply(p).into_iter().map(|e| (e + LOG_EPS).ln() as f32));
        }
        Spectrogram::new(n, self.n_mels(), data)
    }
}

pub fn log_mel(x: &Waveform, n_fft: usize, hop: usize, n_mels: usize) -> Result<Spectrogram> {
    LogMel::new(x.sample_rate(), n_fft, hop, n_mels)?.compute(x)
}

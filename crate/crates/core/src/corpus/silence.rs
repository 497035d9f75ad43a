//! Frame-RMS silence detection and edge trimming.

use serde::{Deserialize, Serialize};

use crate::audio::{from_dbfs, rms, Waveform};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD_DB: f64 = -50.0;
pub const DEFAULT_FRAME_MS: f64 = 25.0;
pub const DEFAULT_HOP_MS: f64 = 10.0;

/// Frame-RMS silence detector. Frames are `frame_ms` long every `hop_ms`; a
/// trailing remainder is covered by one extra frame aligned to the end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SilenceDetector {
    pub threshold_db: f64,
    pub frame_ms: f64,
    pub hop_ms: f64,
}

impl Default for SilenceDetector {
    fn default() -> Self {
        Self {
            threshold_db: DEFAULT_THRESHOLD_DB,
            frame_ms: DEFAULT_FRAME_MS,
            hop_ms: DEFAULT_HOP_MS,
        }
    }
}

impl SilenceDetector {
    pub fn new(threshold_db: f64, frame_ms: f64) -> Result<Self> {
        let d = Self {
            threshold_db,
            frame_ms,
            hop_ms: DEFAULT_HOP_MS.min(frame_ms),
        };
        d.validate()?;
        Ok(d)
    }

    fn validate(&self) -> Result<()> {
        if !(self.threshold_db < 0.0) {
            return Err(Error::precondition(format!(
                "silence threshold {} dBFS must be below 0",
                self.threshold_db
            )));
        }
        if !(self.frame_ms > 0.0 && self.hop_ms > 0.0) {
            return Err(Error::precondition("frame and hop must be positive"));
        }
        Ok(())
    }

    /// Frame spans `(start, end)` in samples.
    pub fn frames(&self, len: usize, sample_rate: u32) -> Vec<(usize, usize)> {
        let sr = f64::from(sample_rate);
        let frame = ((self.frame_ms * sr / 1000.0).round() as usize).max(1);
        let hop = ((self.hop_ms * sr / 1000.0).round() as usize).max(1);
        if len <= frame {
            return vec![(0, len)];
        }
        let full = 1 + (len - frame) / hop;
        let mut spans: Vec<(usize, usize)> = (0..full).map(|i| (i * hop, i * hop + frame)).collect();
        if spans[full - 1].1 < len {
            spans.push((len - frame, len));
        }
        spans
    }

    /// Per-frame silence flags.
    pub fn silent_frames(&self, x: &Waveform) -> Result<Vec<bool>> {
        self.validate()?;
        let thr = from_dbfs(self.threshold_db);
        let s = x.samples();
        Ok(self
            .frames(s.len(), x.sample_rate())
            .into_iter()
            .map(|(a, b)| rms(&s[a..b]) < thr)
            .collect())
    }

    pub fn proportion(&self, x: &Waveform) -> Result<f64> {
        let flags = self.silent_frames(x)?;
        Ok(flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
    }

    /// Removes the leading and trailing runs of silent frames.
    pub fn trim(&self, x: &Waveform) -> Result<Waveform> {
        let flags = self.silent_frames(x)?;
        let spans = self.frames(x.len(), x.sample_rate());
        let first = flags.iter().position(|&f| !f).ok_or(Error::AllSilence)?;
        let last = flags.iter().rposition(|&f| !f).expect("a voiced frame exists");
        let start = if first == 0 { 0 } else { spans[first].0 };
        let end = if last == spans.len() - 1 {
            x.len()
        } else {
            spans[last].1
        };
        x.slice(start, end)
    }
}

/// Trims leading and trailing silence with a 10 ms hop.
pub fn trim_silence(x: &Waveform, energy_threshold_db: f64, frame_ms: f64) -> Result<Waveform> {
    SilenceDetector::new(energy_threshold_db, frame_ms)?.trim(x)
}

/// Fraction of frames whose RMS is below the threshold.
pub fn silence_proportion(x: &Waveform, energy_threshold_db: f64, frame_ms: f64) -> Result<f64> {
    SilenceDetector::new(energy_threshold_db, frame_ms)?.proportion(x)
}

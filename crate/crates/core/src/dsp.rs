//! Short-time Fourier analysis, overlap-add resynthesis and mel filterbanks.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Periodic Hann window (the COLA-friendly variant).
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Square-root periodic Hann, used for analysis and synthesis in the codec path.
pub fn sqrt_hann_periodic(n: usize) -> Vec<f64> {
    hann_periodic(n).into_iter().map(f64::sqrt).collect()
}

/// A planned STFT of fixed size.
#[derive(Clone)]
pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("n_fft", &self.n_fft)
            .field("hop", &self.hop)
            .finish()
    }
}

/// Centered STFT of a signal, ready for modification and resynthesis.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// `frames[t][k]`, `k` in `0..=n_fft/2`.
    pub frames: Vec<Vec<Complex64>>,
    /// Length of the analysed signal in samples.
    pub signal_len: usize,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize, window: Vec<f64>) -> Self {
        assert!(n_fft >= 2 && hop >= 1 && window.len() == n_fft);
        let mut planner = FftPlanner::new();
        Self {
            n_fft,
            hop,
            window,
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    fn transform(&self, segment: impl Iterator<Item = f64>) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = segment
            .zip(&self.window)
            .map(|(s, w)| Complex64::new(s * w, 0.0))
            .collect();
        buf.resize(self.n_fft, Complex64::new(0.0, 0.0));
        self.forward.process(&mut buf);
        buf.truncate(self.n_bins());
        buf
    }

    /// Power spectra of frames starting at `t * hop` for `t` in
    /// `0..max(1, len / hop)`; samples past the end read as zero.
    pub fn power_frames(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n_frames = (x.len() / self.hop).max(1);
        (0..n_frames)
            .map(|t| {
                let start = t * self.hop;
                let seg = (start..start + self.n_fft).map(|i| x.get(i).copied().unwrap_or(0.0));
                self.transform(seg).iter().map(|c| c.norm_sqr()).collect()
            })
            .collect()
    }

    fn centered_frame_count(&self, len: usize) -> usize {
        (len + self.n_fft / 2).div_ceil(self.hop) + 1
    }

    /// Centered analysis: the signal is padded with `n_fft / 2` zeros on the
    /// left so frame `t` is centred on sample `t * hop`.
    pub fn analyze(&self, x: &[f64]) -> Spectrum {
        let pad = self.n_fft / 2;
        let n_frames = self.centered_frame_count(x.len());
        let frames = (0..n_frames)
            .map(|t| {
                let start = (t * self.hop) as isize - pad as isize;
                let seg = (0..self.n_fft).map(|i| {
                    let j = start + i as isize;
                    if j >= 0 && (j as usize) < x.len() {
                        x[j as usize]
                    } else {
                        0.0
                    }
                });
                self.transform(seg)
            })
            .collect();
        Spectrum {
            frames,
            signal_len: x.len(),
        }
    }

    /// Weighted overlap-add inverse of [`Stft::analyze`]. Exact (to rounding)
    /// for unmodified spectra.
    pub fn synthesize(&self, spec: &Spectrum) -> Vec<f64> {
        let pad = self.n_fft / 2;
        let len = spec.signal_len;
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        for (t, frame) in spec.frames.iter().enumerate() {
            buf[..frame.len()].copy_from_slice(frame);
            for k in 1..self.n_fft - frame.len() + 1 {
                buf[self.n_fft - k] = frame[k].conj();
            }
            buf[0].im = 0.0;
            if self.n_fft % 2 == 0 {
                buf[self.n_fft / 2].im = 0.0;
            }
            self.inverse.process(&mut buf);
            let start = (t * self.hop) as isize - pad as isize;
            for (i, (b, &w)) in buf.iter().zip(&self.window).enumerate() {
                let j = start + i as isize;
                if j >= 0 && (j as usize) < len {
                    out[j as usize] += b.re / self.n_fft as f64 * w;
                    norm[j as usize] += w * w;
                }
            }
        }
        for (o, n) in out.iter_mut().zip(&norm) {
            if *n > 1e-12 {
                *o /= n;
            }
        }
        out
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank over the bins of an `n_fft`-point real FFT.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    centers_hz: Vec<f64>,
    /// Per filter: first bin index and the weights from there on.
    filters: Vec<(usize, Vec<f64>)>,
    n_bins: usize,
}

impl MelFilterbank {
    /// Filters peak at 1 on their centre frequency. With `normalize`, each
    /// filter's weights sum to 1 instead (band averages).
    pub fn new(sample_rate: u32, n_fft: usize, n_mels: usize, f_min: f64, f_max: f64, normalize: bool) -> Self {
        let n_bins = n_fft / 2 + 1;
        let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = f64::from(sample_rate) / n_fft as f64;
        let filters = (0..n_mels)
            .map(|m| {
                let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let mut weights: Vec<(usize, f64)> = (0..n_bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f > lo && f <= c {
                            (f - lo) / (c - lo)
                        } else if f > c && f < hi {
                            (hi - f) / (hi - c)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                if weights.is_empty() {
                    // Narrower than a bin: fall back to the nearest bin.
                    let k = ((c / bin_hz).round() as usize).min(n_bins - 1);
                    weights.push((k, 1.0));
                }
                if normalize {
                    let s: f64 = weights.iter().map(|(_, w)| w).sum();
                    weights.iter_mut().for_each(|(_, w)| *w /= s);
                }
                let first = weights[0].0;
                let last = weights[weights.len() - 1].0;
                let mut dense = vec![0.0; last - first + 1];
                for (k, w) in weights {
                    dense[k - first] = w;
                }
                (first, dense)
            })
            .collect();
        Self {
            centers_hz: edges[1..=n_mels].to_vec(),
            filters,
            n_bins,
        }
    }

    pub fn n_mels(&self) -> usize {
        self.filters.len()
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Applies the filterbank to one power (or magnitude) spectrum.
    pub fn apply(&self, spectrum: &[f64]) -> Vec<f64> {
        debug_assert_eq!(spectrum.len(), self.n_bins);
        self.filters
            .iter()
            .map(|(first, w)| {
                w.iter()
                    .zip(&spectrum[*first..])
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analysis_synthesis_is_exact() {
        let x: Vec<f64> = (0..5000)
            .map(|i| ((i as f64) * 0.013).sin() * 0.5 + ((i * 7919) % 97) as f64 / 970.0)
            .collect();
        for (n, hop) in [(512, 128), (256, 64), (1024, 256)] {
            let stft = Stft::new(n, hop, sqrt_hann_periodic(n));
            let y = stft.synthesize(&stft.analyze(&x));
            let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "n={n} hop={hop} err={err}");
        }
    }

    #[test]
    fn power_frame_count_floor_len_over_hop() {
        let stft = Stft::new(512, 160, hann_periodic(512));
        assert_eq!(stft.power_frames(&vec![0.0; 32_800]).len(), 205);
        assert_eq!(stft.power_frames(&[0.0; 10]).len(), 1);
    }

    #[test]
    fn mel_scale_round_trip() {
        for f in [0.0, 100.0, 440.0, 1000.0, 7999.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
    }

    #[test]
    fn normalized_filters_sum_to_one() {
        let fb = MelFilterbank::new(16_000, 512, 16, 0.0, 8000.0, true);
        for (_, w) in &fb.filters {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let flat = fb.apply(&vec![2.0; 257]);
        assert!(flat.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }
}

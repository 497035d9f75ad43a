//! Training-time augmentation: a short random FIR followed by additive
//! coloured noise at a random SNR.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub max_taps: usize,
    pub snr_db: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_taps: 5,
            snr_db: (10.0, 40.0),
        }
    }
}

/// Filters `x` with `taps`, then adds one-pole coloured noise (pole `color`)
/// scaled to `snr_db` below the filtered signal's power.
pub fn augment_with(x: &Waveform, taps: &[f64], snr_db: f64, color: f64, rng_seed: u64) -> Result<Waveform> {
    if taps.is_empty() || !(color.abs() < 1.0) {
        return Err(Error::precondition("need at least one tap and |color| < 1"));
    }
    let s = x.to_f64();
    let filtered: Vec<f64> = (0..s.len())
        .map(|n| {
            taps.iter()
                .enumerate()
                .filter(|(k, _)| *k <= n)
                .map(|(k, h)| h * s[n - k])
                .sum()
        })
        .collect();
    let mut rng = seed::rng(rng_seed, "augment_noise", &[]);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut prev = 0.0;
    let noise: Vec<f64> = (0..s.len())
        .map(|_| {
            prev = color * prev + normal.sample(&mut rng);
            prev
        })
        .collect();
    let p_sig = filtered.iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
    let p_noise = noise.iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
    let scale = if p_noise > 0.0 {
        (p_sig / p_noise / 10f64.powf(snr_db / 10.0)).sqrt()
    } else {
        0.0
    };
    let out: Vec<f64> = filtered.iter().zip(&noise).map(|(a, b)| a + scale * b).collect();
    Waveform::from_f64(&out, x.sample_rate())
}

/// Seeded augmentation; the identity when disabled.
pub fn augment(x: &Waveform, rng_seed: u64, cfg: &AugmentConfig) -> Result<Waveform> {
    if !cfg.enabled {
        return Ok(x.clone());
    }
    let mut rng = seed::rng(rng_seed, "augment", &[]);
    let n_taps = rng.random_range(1..=cfg.max_taps.max(1));
    let mut taps = vec![1.0];
    for _ in 1..n_taps {
        taps.push(rng.random_range(-0.3..0.3));
    }
    let snr = if cfg.snr_db.1 > cfg.snr_db.0 {
        rng.random_range(cfg.snr_db.0..=cfg.snr_db.1)
    } else {
        cfg.snr_db.0
    };
    let color = rng.random_range(-0.9..0.9);
    augment_with(x, &taps, snr, color, rng.random())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::{synth_bonafide, SynthConfig};

    fn speech() -> Waveform {
        synth_bonafide(5, 2, 1.0, 0.0, 0.0, 0, &SynthConfig::default()).unwrap()
    }

    #[test]
    fn disabled_is_identity() {
        let x = speech();
        let cfg = AugmentConfig {
            enabled: false,
            ..AugmentConfig::default()
        };
        assert_eq!(augment(&x, 3, &cfg).unwrap(), x);
    }

    #[test]
    fn forced_snr_is_met() {
        let x = speech();
        let y = augment_with(&x, &[1.0], 40.0, 0.5, 8).unwrap();
        let diff: Vec<f32> = x.samples().iter().zip(y.samples()).map(|(a, b)| b - a).collect();
        let snr = 20.0 * (x.rms() / crate::audio::rms(&diff)).log10();
        assert!((snr - 40.0).abs() < 1.0, "{snr}");
    }

    #[test]
    fn same_seed_same_output() {
        let x = speech();
        let cfg = AugmentConfig::default();
        assert_eq!(augment(&x, 4, &cfg).unwrap(), augment(&x, 4, &cfg).unwrap());
        assert_ne!(augment(&x, 4, &cfg).unwrap(), augment(&x, 5, &cfg).unwrap());
    }
}

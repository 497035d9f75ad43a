//! Fixed-length inputs: repeat-padding and cropping.

use rand::Rng;

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    /// Seeded random contiguous crop.
    Train { seed: u64 },
    /// Centred crop.
    Eval,
}

/// Tiles short inputs and crops long ones to exactly `target` samples.
pub fn pad_or_crop(x: &Waveform, target: usize, mode: CropMode) -> Result<Waveform> {
    if target == 0 {
        return Err(Error::precondition("target length must be positive"));
    }
    let s = x.samples();
    let n = s.len();
    let out: Vec<f32> = if n == target {
        s.to_vec()
    } else if n < target {
        s.iter().cycle().take(target).copied().collect()
    } else {
        let start = match mode {
            CropMode::Eval => (n - target) / 2,
            CropMode::Train { seed: sd } => seed::rng(sd, "crop", &[]).random_range(0..=n - target),
        };
        s[start..start + target].to_vec()
    };
    Waveform::new(out, x.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(n: usize) -> Waveform {
        Waveform::new((0..n).map(|i| (i % 1000) as f32 / 1000.0).collect(), 16_000).unwrap()
    }

    #[test]
    fn identity_at_target() {
        let x = ramp(82_200);
        assert_eq!(pad_or_crop(&x, 82_200, CropMode::Eval).unwrap(), x);
    }

    #[test]
    fn short_input_is_tiled() {
        let x = ramp(41_100);
        let y = pad_or_crop(&x, 82_200, CropMode::Eval).unwrap();
        assert_eq!(&y.samples()[..41_100], x.samples());
        assert_eq!(&y.samples()[41_100..], x.samples());
    }

    #[test]
    fn eval_crop_is_centred() {
        let x = Waveform::new((0..100_000).map(|i| i as f32 / 100_000.0).collect(), 16_000).unwrap();
        let y = pad_or_crop(&x, 82_200, CropMode::Eval).unwrap();
        let start = (100_000 - 82_200) / 2;
        assert_eq!(start, 8_900);
        assert_eq!(y.samples(), &x.samples()[start..start + 82_200]);
    }

    #[test]
    fn train_crop_is_seeded_and_contiguous() {
        let x = Waveform::new((0..5_000).map(|i| i as f32 / 5_000.0).collect(), 16_000).unwrap();
        let a = pad_or_crop(&x, 1_000, CropMode::Train { seed: 3 }).unwrap();
        let b = pad_or_crop(&x, 1_000, CropMode::Train { seed: 3 }).unwrap();
        assert_eq!(a, b);
        let start = x.samples().iter().position(|&v| v == a.samples()[0]).unwrap();
        assert_eq!(a.samples(), &x.samples()[start..start + 1_000]);
    }

    proptest! {
        #[test]
        fn output_length_is_exact(len in 1usize..3_000, seed in any::<u64>(), train in any::<bool>()) {
            let target = 1_000;
            let mode = if train { CropMode::Train { seed } } else { CropMode::Eval };
            let y = pad_or_crop(&ramp(len), target, mode).unwrap();
            prop_assert_eq!(y.len(), target);
        }
    }
}

//! Non-overlapping 2-D patches over a `frames × bins` matrix.

use serde::{Deserialize, Serialize};

use super::mel::Spectrogram;
use crate::error::{Error, Result};

/// `t_p × f_p` patches; patch `(i, j)` is stored at `i * f_p + j` and holds
/// its `patch_h × patch_w` values row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patches: Vec<Vec<f32>>,
    pub t_p: usize,
    pub f_p: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub origin_shape: (usize, usize),
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_h * self.patch_w
    }
}

/// Grid shape for a `frames × bins` input.
pub fn grid_shape(frames: usize, bins: usize, patch_h: usize, patch_w: usize) -> (usize, usize) {
    (frames.div_ceil(patch_h), bins.div_ceil(patch_w))
}

/// Zero-pads to whole patches and partitions.
pub fn patchify(s: &Spectrogram, patch_h: usize, patch_w: usize) -> Result<PatchGrid> {
    if patch_h == 0 || patch_w == 0 {
        return Err(Error::precondition("patch sizes must be positive"));
    }
    let (t_p, f_p) = grid_shape(s.frames, s.bins, patch_h, patch_w);
    let mut patches = Vec::with_capacity(t_p * f_p);
    for i in 0..t_p {
        for j in 0..f_p {
            let mut p = Vec::with_capacity(patch_h * patch_w);
            for r in 0..patch_h {
                for c in 0..patch_w {
                    let (t, f) = (i * patch_h + r, j * patch_w + c);
                    p.push(if t < s.frames && f < s.bins { s.get(t, f) } else { 0.0 });
                }
            }
            patches.push(p);
        }
    }
    Ok(PatchGrid {
        patches,
        t_p,
        f_p,
        patch_h,
        patch_w,
        origin_shape: (s.frames, s.bins),
    })
}

/// Inverse of [`patchify`] on the original extent.
pub fn unpatchify(g: &PatchGrid) -> Result<Spectrogram> {
    let (frames, bins) = g.origin_shape;
    if g.patches.len() != g.t_p * g.f_p || g.patches.iter().any(|p| p.len() != g.patch_dim()) {
        return Err(Error::shape("patch grid is inconsistent with its header"));
    }
    let mut data = vec![0.0; frames * bins];
    for t in 0..frames {
        for f in 0..bins {
            let (i, r) = (t / g.patch_h, t % g.patch_h);
            let (j, c) = (f / g.patch_w, f % g.patch_w);
            data[t * bins + f] = g.patches[i * g.f_p + j][r * g.patch_w + c];
        }
    }
    Spectrogram::new(frames, bins, data)
}

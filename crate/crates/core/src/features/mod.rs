//! Fixed-length inputs, log-mel spectrograms, patches, masks and augmentation.

pub mod augment;
pub mod crop;
pub mod mask;
pub mod mel;
pub mod patch;

pub use augment::{augment, AugmentConfig};
pub use crop::{pad_or_crop, CropMode};
pub use mask::{plan_mask, MaskPlan};
pub use mel::{log_mel, LogMel, Spectrogram};
pub use patch::{grid_shape, patchify, unpatchify, PatchGrid};

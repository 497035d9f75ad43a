//! Coarse-to-fine acoustic branch.

pub mod coarse;
pub mod loss;
pub mod mae;
pub mod readout;

pub use coarse::{standardize, CoarseEncoder};
pub use loss::{decoder_errors, masked_mse_loss, recon_margin_loss, recon_margin_loss_batch};
pub use mae::{Mae, MaeOutput, PatchLayout};
pub use readout::{attend_reconstructions, Readout};

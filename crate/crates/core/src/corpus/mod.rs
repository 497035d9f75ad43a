//! Synthetic codec-fingerprint corpus.

pub mod build;
pub mod codec;
pub mod labels;
pub mod manifest;
pub mod silence;
pub mod split;
pub mod synth;

pub use build::{build_corpus, default_catalog, plan_corpus, render_record, CodecSystem, CorpusConfig};
pub use codec::{apply_codec_sim, CodecSim, CodecSimConfig};
pub use labels::{AuxKind, CodecProfile, DecKind, Task, TaxonomyLabel, VqKind};
pub use manifest::{CorpusManifest, Fold, UtteranceRecord};
pub use silence::{silence_proportion, trim_silence, SilenceDetector};
pub use split::{split_seen_unseen, train_dev, SeenUnseenSplit};
pub use synth::{synth_bonafide, SynthConfig};

//! Seen/unseen content partition by utterance id.

use super::manifest::{CorpusManifest, Fold};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SeenUnseenSplit {
    /// Seen content, train and dev folds, seen codecs only.
    pub train: CorpusManifest,
    /// Seen content, test fold (including any held-out-codec records).
    pub test_seen: CorpusManifest,
    /// Unseen content, every fold.
    pub test_unseen: CorpusManifest,
}

/// Partitions by `utt_id <= id_threshold`. Records from held-out codecs never
/// enter `train`.
pub fn split_seen_unseen(manifest: &CorpusManifest, id_threshold: u64) -> Result<SeenUnseenSplit> {
    if manifest.is_empty() {
        return Err(Error::precondition("cannot split an empty manifest"));
    }
    let ids = manifest.utt_ids();
    let (lo, hi) = (ids[0], ids[ids.len() - 1]);
    if id_threshold < lo || id_threshold >= hi {
        return Err(Error::precondition(format!(
            "id threshold {id_threshold} outside [{lo}, {hi}) leaves a split empty"
        )));
    }
    let seen = |r: &super::manifest::UtteranceRecord| r.utt_id <= id_threshold;
    Ok(SeenUnseenSplit {
        train: manifest.filtered(|r| seen(r) && r.fold != Fold::Test && !r.unseen_codec),
        test_seen: manifest.filtered(|r| seen(r) && (r.fold == Fold::Test || r.unseen_codec)),
        test_unseen: manifest.filtered(|r| !seen(r)),
    })
}

/// Separates the dev fold from a training manifest.
pub fn train_dev(train: &CorpusManifest) -> (CorpusManifest, CorpusManifest) {
    (
        train.filtered(|r| r.fold == Fold::Train),
        train.filtered(|r| r.fold == Fold::Dev),
    )
}

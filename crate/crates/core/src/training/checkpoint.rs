//! Checkpoint directories.
//!
//! ```text
//! <dir>/model.safetensors      parameters + CheckpointMeta header
//! <dir>/optimizer.safetensors  AdamW moments + AdamWMeta header (optional)
//! <dir>/checkpoint.json        CheckpointMeta, pretty-printed
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::trainer::{EpochRecord, TrainConfig};
use crate::corpus::Task;
use crate::error::{Error, Result};
use crate::model::{CoarseInit, Model, Variant};
use crate::nn::optim::AdamWMeta;
use crate::nn::ParamStore;

pub const CHECKPOINT_SCHEMA: &str = "codectrace.checkpoint/1";
pub const MODEL_FILE: &str = "model.safetensors";
pub const OPTIMIZER_FILE: &str = "optimizer.safetensors";
pub const META_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema: String,
    pub variant: Variant,
    pub task: Task,
    pub coarse_init: CoarseInit,
    pub n_decoders: usize,
    pub config: TrainConfig,
    pub config_digest: String,
    pub profile_digest: String,
    /// Epoch whose end state these parameters are (0-based).
    pub epoch: usize,
    /// Optimizer steps taken when this state was reached.
    pub step: u64,
    pub history: Vec<EpochRecord>,
    /// `(w_cls, w_recon)` when the variant has a reconstruction loss.
    pub awl: Option<(f64, f64)>,
    pub semantic_digest: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
    pub optimizer: Option<(ParamStore, AdamWMeta)>,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.model.store().save(&dir.join(MODEL_FILE), &self.meta)?;
        if let Some((state, meta)) = &self.optimizer {
            state.save(&dir.join(OPTIMIZER_FILE), meta)?;
        }
        let p = dir.join(META_FILE);
        let text = serde_json::to_string_pretty(&self.meta)?;
        std::fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mp = dir.join(MODEL_FILE);
        if !mp.exists() {
            return Err(Error::MissingArtifact(mp));
        }
        let (store, meta): (ParamStore, CheckpointMeta) = ParamStore::load(&mp, 0)?;
        let ctx = mp.display().to_string();
        if meta.schema != CHECKPOINT_SCHEMA {
            return Err(Error::Schema { context: ctx, field: "schema".into() });
        }
        if meta.n_decoders != meta.variant.n_decoders(meta.task) {
            return Err(Error::Schema { context: ctx, field: "n_decoders".into() });
        }
        if meta.config.profile.digest() != meta.profile_digest {
            return Err(Error::Schema { context: ctx, field: "profile_digest".into() });
        }
        let model = Model::from_store(&meta.config.profile, meta.variant, meta.task, store)?;
        let op = dir.join(OPTIMIZER_FILE);
        let optimizer = if op.exists() {
            Some(ParamStore::load::<AdamWMeta>(&op, 0)?)
        } else {
            None
        };
        Ok(Self { model, meta, optimizer })
    }

    /// Errors unless the checkpoint was trained for `task`.
    pub fn expect_task(&self, task: Task) -> Result<()> {
        if self.meta.task == task {
            Ok(())
        } else {
            Err(Error::TaskMismatch {
                expected: task.to_string(),
                found: self.meta.task.to_string(),
            })
        }
    }
}

//! Which decoder reconstructs each item best.

use serde::{Deserialize, Serialize};

use crate::acoustic::decoder_errors;
use crate::audio::Waveform;
use crate::classifier::argmax;
use crate::error::{Error, Result};
use crate::features::plan_mask;
use crate::model::Model;
use crate::seed;
use crate::semantic::SemanticBackbone;
use crate::training::{Dataset, PrepMode, Preparer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Specialization {
    /// Fraction of items whose lowest-error decoder is their class decoder.
    pub accuracy: f64,
    pub n_items: usize,
    /// Lowest-error decoder per item.
    pub argmin: Vec<usize>,
    /// Masked MSE per item and decoder.
    pub errors: Vec<Vec<f64>>,
}

/// Masks each item with a plan keyed by `(seed, item)` at `ratio` and
/// compares the decoders' masked reconstruction errors.
pub fn decoder_specialization(
    model: &Model,
    data: &Dataset,
    backbone: Option<&SemanticBackbone>,
    ratio: f64,
    seed_root: u64,
) -> Result<Specialization> {
    let grid = model
        .mask_grid()
        .ok_or_else(|| Error::precondition(format!("{} has no decoders", model.variant())))?;
    if model.n_decoders() != data.task.n_classes() {
        return Err(Error::precondition("specialization needs one decoder per class"));
    }
    if data.is_empty() {
        return Err(Error::precondition("no items"));
    }
    let prep = Preparer::new(model.profile(), model.variant())?;
    let mode = PrepMode::Eval { trim: None };
    let mut errors = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let item: [(u64, &Waveform); 1] = [(i as u64, &data.waves[i])];
        let inputs = prep.prepare(&item, &mode, backbone)?;
        let plan = plan_mask(grid, ratio, seed::substream(seed_root, "specialization", &[i as u64]))?;
        let out = model
            .forward(&inputs, Some(&plan), None)?
            .mae
            .ok_or_else(|| Error::precondition("forward produced no reconstructions"))?;
        let e = decoder_errors(&out.target, &out.recons, &out.masked)?
            .to_dtype(candle_core::DType::F64)?
            .to_vec2::<f64>()?;
        errors.push(e.into_iter().next().unwrap_or_default());
    }
    let argmin: Vec<usize> = errors
        .iter()
        .map(|e| argmax(&e.iter().map(|v| -v).collect::<Vec<_>>()))
        .collect();
    let hits = argmin.iter().zip(&data.labels).filter(|(a, b)| a == b).count();
    Ok(Specialization {
        accuracy: hits as f64 / data.len() as f64,
        n_items: data.len(),
        argmin,
        errors,
    })
}

//! Encoder-combination ablation over variants.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::{run_condition_grid, ConditionGrid};
use super::report::{ContentCondition, SilenceCondition};
use crate::corpus::SilenceDetector;
use crate::error::Result;
use crate::model::{CoarseInit, Variant};
use crate::semantic::SemanticBackbone;
use crate::training::{train, Checkpoint, TaskSplits, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seen_with: f64,
    pub seen_without: f64,
    pub unseen_with: f64,
    pub unseen_without: f64,
    pub unseen_codec: Option<f64>,
}

impl AblationRow {
    pub fn from_grid(variant: Variant, g: &ConditionGrid) -> Self {
        use ContentCondition::*;
        use SilenceCondition::*;
        Self {
            variant,
            seen_with: g.f1(Seen, With),
            seen_without: g.f1(Seen, Without),
            unseen_with: g.f1(Unseen, With),
            unseen_without: g.f1(Unseen, Without),
            unseen_codec: g.unseen_codec.as_ref().map(|r| r.macro_f1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// Markdown table, macro-F1 in percent.
    pub fn render(&self) -> String {
        let mut s = String::from(
            "| variant | seen | seen, no silence | unseen | unseen, no silence | unseen codec |\n|---|---|---|---|---|---|\n",
        );
        let pct = |v: f64| format!("{:.2}", 100.0 * v);
        for r in &self.rows {
            s += &format!(
                "| {} | {} | {} | {} | {} | {} |\n",
                r.variant,
                pct(r.seen_with),
                pct(r.seen_without),
                pct(r.unseen_with),
                pct(r.unseen_without),
                r.unseen_codec.map_or("-".into(), pct)
            );
        }
        s
    }
}

/// Trains every variant on the same splits and seed, evaluates each on the
/// condition grid and, with `out`, saves each best checkpoint under
/// `out/<variant>`.
pub fn run_ablation_matrix(
    base: &TrainConfig,
    variants: &[Variant],
    splits: &TaskSplits,
    backbone: Option<&SemanticBackbone>,
    tuned_from: Option<&Checkpoint>,
    detector: SilenceDetector,
    out: Option<&Path>,
) -> Result<(AblationTable, Vec<ConditionGrid>)> {
    let mut rows = Vec::with_capacity(variants.len());
    let mut grids = Vec::with_capacity(variants.len());
    for &v in variants {
        let mut cfg = base.clone();
        cfg.variant = v;
        if v == Variant::Baseline || !v.uses_coarse() {
            cfg.coarse_init = CoarseInit::Random;
        }
        let run = train(&cfg, &splits.train, &splits.dev, backbone, tuned_from, None)?;
        if let Some(dir) = out {
            run.best.save(&dir.join(v.name()))?;
        }
        let g = run_condition_grid(&run.best.model, splits, backbone, detector)?;
        rows.push(AblationRow::from_grid(v, &g));
        grids.push(g);
    }
    Ok((AblationTable { rows }, grids))
}

//! The {with, without silence} × {seen, unseen content} grid.

use serde::{Deserialize, Serialize};

use super::report::{evaluate, Conditions, ContentCondition, EvalReport, SilenceCondition};
use crate::corpus::SilenceDetector;
use crate::error::Result;
use crate::model::Model;
use crate::semantic::SemanticBackbone;
use crate::training::TaskSplits;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionGrid {
    /// Seen/with, seen/without, unseen/with, unseen/without.
    pub cells: Vec<EvalReport>,
    /// Held-out codecs, untrimmed.
    pub unseen_codec: Option<EvalReport>,
    /// With-silence minus without-silence F1, seen content.
    pub silence_drop_seen: f64,
    /// With-silence minus without-silence F1, unseen content.
    pub silence_drop_unseen: f64,
    /// Seen minus unseen F1, with silence.
    pub content_drop: f64,
}

impl ConditionGrid {
    pub fn cell(&self, content: ContentCondition, silence: SilenceCondition) -> Option<&EvalReport> {
        self.cells
            .iter()
            .find(|r| r.conditions == Conditions { silence, content })
    }

    pub fn f1(&self, content: ContentCondition, silence: SilenceCondition) -> f64 {
        self.cell(content, silence).map_or(f64::NAN, |r| r.macro_f1)
    }
}

/// Evaluates the four cells plus the unseen-codec cell. The model is only
/// read.
pub fn run_condition_grid(
    model: &Model,
    splits: &TaskSplits,
    backbone: Option<&SemanticBackbone>,
    detector: SilenceDetector,
) -> Result<ConditionGrid> {
    let mut cells = Vec::with_capacity(4);
    for (content, data) in [
        (ContentCondition::Seen, &splits.test_seen),
        (ContentCondition::Unseen, &splits.test_unseen),
    ] {
        for silence in [SilenceCondition::With, SilenceCondition::Without] {
            cells.push(evaluate(model, data, backbone, Conditions { silence, content }, detector)?);
        }
    }
    let unseen_codec = if splits.test_unseen_codec.is_empty() {
        None
    } else {
        Some(evaluate(
            model,
            &splits.test_unseen_codec,
            backbone,
            Conditions {
                silence: SilenceCondition::With,
                content: ContentCondition::UnseenCodec,
            },
            detector,
        )?)
    };
    let f = |i: usize| cells[i].macro_f1;
    Ok(ConditionGrid {
        silence_drop_seen: f(0) - f(1),
        silence_drop_unseen: f(2) - f(3),
        content_drop: f(0) - f(2),
        unseen_codec,
        cells,
    })
}

//! Evaluation reports.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::metrics::{confusion, macro_f1, macro_f1_present, per_class_f1};
use crate::corpus::{SilenceDetector, Task};
use crate::error::Result;
use crate::model::Variant;
use crate::semantic::SemanticBackbone;
use crate::training::{predict, Dataset};
use crate::{exec, model::Model};

pub const REPORT_SCHEMA: &str = "codectrace.report/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SilenceCondition {
    With,
    Without,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentCondition {
    Seen,
    Unseen,
    /// Codec systems held out of training.
    UnseenCodec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Conditions {
    pub silence: SilenceCondition,
    pub content: ContentCondition,
}

impl fmt::Display for Conditions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.silence {
            SilenceCondition::With => "with_silence",
            SilenceCondition::Without => "without_silence",
        };
        let c = match self.content {
            ContentCondition::Seen => "seen",
            ContentCondition::Unseen => "unseen",
            ContentCondition::UnseenCodec => "unseen_codec",
        };
        write!(f, "{c}/{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceScore {
    pub count: usize,
    /// Macro-F1 over the classes present among the source's items.
    pub f1: f64,
    /// Mean fraction of silent frames in the source's evaluated inputs.
    pub silence_proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    /// Always `"macro_f1"`.
    pub metric: String,
    pub task: Task,
    pub variant: Variant,
    pub conditions: Conditions,
    pub n_items: usize,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    /// `confusion[true][pred]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_source: BTreeMap<String, SourceScore>,
}

/// Scores `model` on `data` under `conditions`.
pub fn evaluate(
    model: &Model,
    data: &Dataset,
    backbone: Option<&SemanticBackbone>,
    conditions: Conditions,
    detector: SilenceDetector,
) -> Result<EvalReport> {
    let trim = (conditions.silence == SilenceCondition::Without).then_some(detector);
    let p = predict(model, data, backbone, trim)?;
    let n = data.task.n_classes();
    let silence = exec::try_map(&data.waves, |w| -> Result<f64> {
        let x = match trim {
            Some(d) => d.trim(w).unwrap_or_else(|_| w.clone()),
            None => w.clone(),
        };
        detector.proportion(&x)
    })?;
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in data.records.iter().enumerate() {
        groups.entry(r.source().to_string()).or_default().push(i);
    }
    let mut per_source = BTreeMap::new();
    for (src, idx) in groups {
        let pr: Vec<usize> = idx.iter().map(|&i| p.preds[i]).collect();
        let tr: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        per_source.insert(
            src,
            SourceScore {
                count: idx.len(),
                f1: macro_f1_present(&pr, &tr, n)?,
                silence_proportion: idx.iter().map(|&i| silence[i]).sum::<f64>() / idx.len() as f64,
            },
        );
    }
    Ok(EvalReport {
        schema: REPORT_SCHEMA.into(),
        metric: "macro_f1".into(),
        task: data.task,
        variant: model.variant(),
        conditions,
        n_items: data.len(),
        macro_f1: macro_f1(&p.preds, &data.labels, n)?,
        per_class_f1: per_class_f1(&p.preds, &data.labels, n)?,
        confusion: confusion(&p.preds, &data.labels, n)?,
        per_source,
    })
}

impl EvalReport {
    /// `(source, silence_proportion, f1)` groups for correlation analysis.
    pub fn source_groups(&self) -> Vec<(String, f64, f64)> {
        self.per_source
            .iter()
            .map(|(k, s)| (k.clone(), s.silence_proportion, s.f1))
            .collect()
    }

    /// Plain-text rendering: header, per-class F1 and the confusion matrix.
    pub fn render(&self) -> String {
        let mut s = format!(
            "{} {} [{}] n={} macro-F1 {:.4}\n",
            self.variant, self.task, self.conditions, self.n_items, self.macro_f1
        );
        s += "per-class F1:";
        for f in &self.per_class_f1 {
            s += &format!(" {f:.4}");
        }
        s += "\nconfusion (rows true, cols pred):\n";
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>5}")).collect();
            s += &cells.join("");
            s.push('\n');
        }
        s
    }
}

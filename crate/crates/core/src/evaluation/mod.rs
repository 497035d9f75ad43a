//! Metrics, reports, the condition grid and the ablation matrix.

pub mod ablation;
pub mod correlation;
pub mod grid;
pub mod metrics;
pub mod report;
pub mod specialization;

pub use ablation::{run_ablation_matrix, AblationRow, AblationTable};
pub use correlation::{pearson, silence_f1_correlation, spearman, CorrelationMethod, CorrelationResult};
pub use grid::{run_condition_grid, ConditionGrid};
pub use metrics::{confusion, macro_f1, per_class_f1};
pub use report::{evaluate, Conditions, ContentCondition, EvalReport, SilenceCondition, SourceScore, REPORT_SCHEMA};
pub use specialization::{decoder_specialization, Specialization};

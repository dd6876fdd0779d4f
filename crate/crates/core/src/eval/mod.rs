//! Metrics, the validation-rank threshold rule, feature-interval analysis
//! and attack reports.

pub mod intervals;
pub mod metrics;
pub mod report;

pub use intervals::{interval_analysis, min_max_normalize, IntervalRow};
pub use metrics::{
    apply_threshold, compute_accuracies, compute_auc, roc_points, select_threshold, threshold_rank, Accuracies,
    Confusion, ScoredExample, ThresholdParams,
};
pub use report::{evaluate_attack, render_table, write_interval_csv, write_scores_csv, AttackReport};

//! Closed-set accuracy, ROC/AUC for open-set rejection, reports and plots.

mod metrics;
mod plot;
mod report;

pub use metrics::{
    closed_accuracy, confusion_matrix, per_class_accuracy, rank_auc, roc_auc, threshold_at_tpr,
    RocCurve, RocPoint,
};
pub use plot::{plot_bars, plot_roc};
pub use report::{
    evaluate_open_set, evaluate_outputs, predict_in_batches, reference_values, Evaluation,
    MetricsReport, ReferenceValues,
};

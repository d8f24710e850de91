//! Metric suite, distribution diagnostics and origin-vs-composition tables.

mod ks;
mod metrics;
mod table;

pub use ks::{ks_shift, ks_test, KsResult};
pub use metrics::{accuracy, auc, binary_f1, compute_metrics, macro_f1, tpr_at_fpr_target, MetricReport, LOW_FPR};
pub use table::{comparison_table, table_csv, table_json, ComparisonRow};

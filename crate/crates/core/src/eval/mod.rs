//! Benchmark scoring: per-(contract, type) binary classification, metrics,
//! dataset loaders and table rendering.

mod dataset;
mod metrics;
mod score;
mod table;

pub use dataset::{
    load_labeled, load_labeled_with, DatasetError, LabeledDataset, LabeledGroup, Project, RealWorldManifest,
    ReportedFinding, SECURE_GROUP,
};
pub use metrics::{
    classify, format_optional_percent, format_percent, metrics, overall_recall, ClassificationOutcome, ConfusionCounts,
    MetricsSummary, Scalar,
};
pub use score::{
    evaluate, score_contract, score_realworld, Evaluation, Exclusion, FileKey, RealWorldScore, TypeCounts,
};
pub use table::{load_counts_csv, render_table, CountsError, ResultSet, TableRow, TableStyle};

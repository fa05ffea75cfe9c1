//! Multi-agent smart-contract audit pipeline over an abstract chat-completion
//! backend, with a benchmark harness for binary-classification metrics.

pub mod engine;
pub mod eval;
pub mod gateway;
pub mod model;
pub mod modes;
pub mod prompts;
pub mod report;

pub use engine::{run_pipeline, PipelineConfig, PipelineError};
pub use model::{AuditReport, Contract, Mode, Verdict, VulnCode, VulnerabilityRegistry};

/// Metrics in double precision, the usual choice.
pub type Metrics = eval::MetricsSummary<f64>;
/// Metrics in single precision.
pub type Metrics32 = eval::MetricsSummary<f32>;
/// Exact rational metrics, for oracle comparisons.
pub type ExactMetrics = eval::MetricsSummary<num_rational::Ratio<u64>>;

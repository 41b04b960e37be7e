//! Evaluation and diagnostics: confusion-matrix metrics, the per-dimension
//! Kolmogorov–Smirnov study, and forward-pass FLOP counts.

mod flops;
mod ks;
mod metrics;

pub use flops::{estimate_flops, kernel_flops, FlopsConfig, FlopsReport, REFERENCE_FLOPS};
pub use ks::{dimension_ks_analysis, kolmogorov_survival, ks_statistic, ks_two_sample, KsMethod, KsResult, KsSummary, PairingPolicy};
pub use metrics::{compute_metrics, MetricsReport, ReferenceRow, REFERENCE_METRICS};

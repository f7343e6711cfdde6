//! Separation quality metrics and test-set evaluation.

mod bss;
mod report;

pub use bss::{capped_ratio_db, decompose, improvement, sdr, sdri, si_sdr, si_sdri, Decomposition, METRIC_CAP_DB};
pub use report::{
    evaluate_sample, evaluate_testset, MetricColumn, MetricsReport, Passthrough, ReportRow, SkippedSample,
    SourceMetrics, SourceSeparator, Summary, CSV_HEADER,
};

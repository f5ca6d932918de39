//! Cross-validation harness, metrics and stratified reports.

mod benchmark;
mod external;
mod folds;
mod io;
mod metrics;
mod report;
mod stratify;

pub use benchmark::{method_rank, run_benchmark, run_benchmark_k, BenchmarkConfig, BenchmarkOutcome, Method, RunNote};
pub use external::{score_external, ExternalScore};
pub use folds::{make_site_folds, FoldPlan};
pub use io::{
    read_external, read_foldplan, read_records, write_external, write_foldplan, write_records, ExternalRow,
    EXTERNAL_HEADER, FOLDPLAN_HEADER, RECORD_HEADER,
};
pub use metrics::{compute_metrics, compute_metrics_pooled, Metrics, Pooling, PredictionRecord};
pub use report::{build_report, ordered_methods, EvalReport, ReportRow, REPORT_HEADER};
pub use stratify::{stratify, stratum_of, Strategy};

//! Experiment orchestration: configuration files, protocol runs, run
//! directories and exports.

mod compare;
mod config;
mod export;
mod particles;
mod run;

pub use compare::{compare_protocols, run_comparison, Comparison, ComparisonRow, OrderingFlag, REFERENCE_ACCURACY};
pub use config::{ExperimentConfig, OutputConfig, ProblemConfig, ScheduleConfig};
pub use export::{plot_export, tidy_rows, TidyRow};
pub use particles::{
    benchmark_problem, decay_summary, run_scan_experiment, run_sde_experiment, DecaySummary, DECAY_WINDOW, TAU_THEORY,
};
pub use run::{
    read_manifest, run_all, run_experiment, run_protocol, summarize, Budget, Evaluation, ExperimentOutcome, ProtocolRun,
    RoundMetrics, RunManifest, Setup, SummaryRow,
};

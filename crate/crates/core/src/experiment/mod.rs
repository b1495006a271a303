//! End-to-end experiment runs: config, pipeline and report files.

mod config;
mod report;
mod runner;

pub use config::{DataSource, DelayConfig, EvalSettings, ExperimentConfig, SvrSettings};
pub use report::{
    audit, audit_files, emit_report, format_frames, format_records, format_table, parse_frames,
    parse_records, postprocess_from_records, stage_reports_from_records, EmittedFiles, TableRow,
};
pub use runner::{
    load_data, run_experiment, run_fusion, run_grid, run_on_dataset, run_unimodal, BranchSummary,
    FrameArchive, RunOutcome, RunReport, Stage,
};

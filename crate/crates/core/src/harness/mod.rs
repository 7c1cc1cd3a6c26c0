//! Experiment configuration, hyperparameter search and the two benchmark
//! settings.

mod config;
mod report;
mod run;
mod table;
mod tune;

pub use config::{ExperimentConfig, OUT_DIR_ENV, SCHEMA, SCHEMA_VERSION};
pub use report::{render, report, summarize, ReportRow};
pub use run::{
    expansion_path, jobs, ratios, ratios_path, run_job, run_setting, BaselineRow, ExpansionRow, Job, JobOutput, RatioRow,
    ResultRow, RunSummary, Setting, NO_IPM, NO_SELECTOR, PLUGIN,
};
pub use table::{load as load_table, FailureRow, JobKey, Record};
pub use tune::{
    fold_indices, random_search, tune_outcome, tune_propensity, tune_representation, width_grid, Candidate, HyperGrid,
    TuneOutcome, TuneStage,
};

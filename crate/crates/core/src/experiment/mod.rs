//! Config-driven experiment matrices: perturb the training split only, train
//! and score every configured cell on the clean test split, and report the
//! results as CSV, JSON and SVG.

mod config;
mod plots;
mod report;
mod runner;

pub use config::{
    ClassicPipeline, DataSource, Defense, DefenseSpec, ExperimentConfig, CONFIG_VERSION,
    DEFAULT_EPSILONS,
};
pub use plots::{
    bar_chart, line_chart, plots_from_csv_rows, plots_from_rows, report_plots, Series,
};
pub use report::{
    parse_csv, read_report, report_csv, rows_to_csv, write_report, CellResult, ExperimentReport,
    ReportRow, CLEAN, CSV_HEADER,
};
pub use runner::{
    cell_seed, load_splits, perturbation_for, perturbation_seed, perturbed_train, run_experiment,
    run_experiment_with, score_cell, Cell, CellOutcome, Learner,
};

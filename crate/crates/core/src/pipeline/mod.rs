//! Experiment orchestration: configuration, data preparation, the evaluation
//! grid, synthetic cohorts, and tensor summary tables.

mod config;
mod experiment;
mod prepare;
mod simulate;
mod table1;

pub use config::{ExperimentConfig, InputPaths, DEFAULT_INNER_FOLDS, DEFAULT_OMEGA_GRID, DEFAULT_TRUNCATION_PERCENTILE};
pub use experiment::{
    evaluate_model, grid_cells, run_experiment, run_prepared, select_omega, tune_omega, write_model_artifacts, Cell,
    EvalReport, ExperimentOutput, FeatureSet, FoldRecord, OmegaSelection,
};
pub use prepare::{build_data, load_cohort, load_indications, prepare, stats_both_modes, PreparedData};
pub use simulate::{simulate_cohort, CountModel, SimulatedFiles, Simulation, SyntheticSpec, SyntheticTruth};
pub use table1::{report_table1, Table1, Table1Column};

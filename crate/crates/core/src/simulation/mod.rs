//! Simulation settings, population truth and repeated-sampling experiments.

pub mod dgp;
pub mod scenario;
pub mod truth;

pub use dgp::{
    generate, generate_setting1, generate_setting2, outcome_spec, propensity_basis, DgpOptions,
    Setting, Specification,
};
pub use scenario::{
    format_table, run_scenario, write_rows_csv, ResultRow, Scenario, ScenarioResult, ScenarioSpec,
    SimEstimator,
};
pub use truth::{default_truth_grid, monte_carlo_truth, TruthValues};

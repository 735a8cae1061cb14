//! Experiment orchestration: configuration files, run execution and
//! persistence, CSV metrics, and the seeded verification suites behind the
//! command-line interface.

pub mod config;
pub mod metrics;
pub mod runner;
pub mod verify;

pub use config::{config_hash, load_config, parse_config, write_config};
pub use metrics::{
    aggregate, empirical_error_rate, iteration_rows, iterations_to_optimal, rollout_value,
    summarize, true_value, unsafe_confirmations, Comparison, IterationRow, RunSummary,
};
pub use runner::{aggregate_dir, execute_runs, summary_stats, AggregateOutput, SummaryStats};

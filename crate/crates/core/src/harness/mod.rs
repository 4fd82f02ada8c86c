//! Experiment configuration, Monte Carlo driver, sweeps and output writers.

pub mod cli;
pub mod config;
pub mod csv;
pub mod experiment;
pub mod figures;
pub mod svg;

pub use config::{load_config, parse_config, ExperimentConfig};
pub use experiment::{run_experiment, run_experiment_with, run_sweep, ExperimentResult, RunOptions, SweepSpec};

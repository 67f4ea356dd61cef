//! Experiment configuration, metrics, sweeps and the validation suite.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod validate;

pub use config::{InitSpec, NetworkSpec, ProblemSpec, RunConfig, ScheduleSpec, SetSpec};
pub use experiment::{
    execute, run_experiment, sweep, ExperimentResult, RunSummary, SweepCell, SweepGrid,
};
pub use metrics::{
    condition_check, fit_rate_exponent, predicted_exponent, relative_error, RateFit, RelativeError,
};
pub use validate::{validate_suite, CheckItem, ValidateOptions, ValidationReport};

//! Configs, runs, records and sweeps for the obstacle solvers.

pub mod analysis;
pub mod config;
pub mod run;
pub mod sweep;
pub mod verify;

pub use config::{ProblemConfig, ValidationError};
pub use run::{run, write_outputs, ExperimentRecord, RunOutput};

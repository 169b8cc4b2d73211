//! Batch front end for `actoreg-core`: dataset generation, training runs,
//! hyperparameter sweeps, score reports and post-hoc probes of trained
//! actors. The `actoreg` binary is a thin clap layer over [`commands`].

pub mod commands;
pub mod config;
pub mod error;
mod jobs;
pub mod report;
pub mod run;
pub mod sweep;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use jobs::map_jobs;

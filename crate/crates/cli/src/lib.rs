//! Command-line driver: run configuration and the train, eval, predict,
//! sweep-lambda and export-protos subcommands.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_eval, cmd_export_protos, cmd_predict, cmd_sweep_lambda, cmd_train, SweepRow, TrainSummary,
};
pub use config::RunConfig;

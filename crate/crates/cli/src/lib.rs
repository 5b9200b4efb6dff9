//! Experiment driver for the `tamopt` binary: config parsing, subcommand
//! dispatch and result files.

pub mod commands;
pub mod config;
pub mod output;

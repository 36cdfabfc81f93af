//! Command-line front end: dataset layout, configuration and subcommands.

pub mod args;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod export;
pub mod io;

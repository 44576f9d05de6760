//! Experiment orchestration around `aiol-core`: TOML configuration, CSV
//! data and trace files, binary checkpoints, JSON reports, and the
//! subcommand implementations behind the `aiol` binary.

pub mod commands;
pub mod config;
pub mod io;
pub mod report;

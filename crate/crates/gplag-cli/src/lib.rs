//! Command-line front end for the lead-lag Gaussian-process library: flag
//! parsing, subcommand drivers, and the named replication experiments. The
//! experiment runners live here (not in the binary) so integration tests can
//! call them in-process.

pub mod commands;
pub mod experiments;

//! Library side of the `midlmc` command-line tool.

pub mod commands;
pub mod config;

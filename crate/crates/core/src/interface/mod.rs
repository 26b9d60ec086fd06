//! File formats, in-process commands and the CLI.

pub mod cli;
pub mod commands;
pub mod formats;

//! Command-line front end for `homog-core`: TOML experiment configurations,
//! a rayon executor, artifact files and the run manifest.

pub mod cli;
pub mod config;
pub mod error;
pub mod exec;
pub mod grid_file;
pub mod output;
pub mod pipeline;

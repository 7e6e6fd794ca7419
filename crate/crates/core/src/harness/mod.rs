//! Experiment harness: configuration, runs, grids and output files.

pub mod cli;
pub mod config;
pub mod grid;
pub mod output;
pub mod plotdata;

//! Std companion of `smpc-core`: JSON configuration, artifact formats,
//! worker-pool runners and the `smpc` command line.

pub mod cli;
pub mod config;
pub mod io;
pub mod runner;

pub use config::Config;

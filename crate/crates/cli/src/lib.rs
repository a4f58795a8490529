//! Configuration, table caching and subcommands behind the `bandit-trials`
//! binary.

pub mod commands;
pub mod config;
pub mod tables;

pub use config::{CriticalChoice, Hypothesis, PolicyEntry, RunConfig, PRESETS};
pub use tables::{TableCache, TABLE_DIR_ENV};

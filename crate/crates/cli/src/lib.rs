//! Experiment driver for the `ising-topo` binary.
//!
//! Each subcommand resolves defaults, an optional TOML config and flags into
//! one configuration value, writes its CSV/SVG outputs and finishes with a
//! `manifest.json` from which `rerun` can replay it.

pub mod args;
pub mod commands;
pub mod config;
pub mod experiment;
pub mod manifest;
pub mod plot;
pub mod tables;

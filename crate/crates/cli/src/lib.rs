//! Config-driven front end to `ergolab-core`: parse a TOML experiment,
//! run it and write a reproducible output bundle.

pub mod bundle;
pub mod config;
pub mod experiments;
pub mod expr;

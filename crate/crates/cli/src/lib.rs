//! Command-line front end for the differentially private in-context
//! inference library: config parsing, experiment drivers, and deterministic
//! JSONL/CSV output.

pub mod commands;
pub mod config;
pub mod output;
pub mod providers;

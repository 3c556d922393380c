//! Subcommand drivers. Each one loads a validated config, runs its
//! experiment, and writes a JSONL record stream plus a CSV summary next to
//! it, both atomically.

use std::path::{Path, PathBuf};

use crate::config::{ConfigError, ExperimentKind, RunConfig};

pub mod calibrate;
pub mod compare_agg;
pub mod converge;
pub mod mia;
pub mod run;

/// Failures split by exit code: usage/config problems exit 2, experiment
/// failures (output IO, too many failed records) exit 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Run(m) => write!(f, "{m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

/// Loads the config and checks the experiment kind fits the subcommand.
pub fn load_config(path: &Path, accepted: &[ExperimentKind], subcommand: &str) -> Result<RunConfig, CliError> {
    let cfg = RunConfig::from_path(path)?;
    if !accepted.contains(&cfg.kind) {
        return Err(CliError::Usage(format!(
            "config kind `{}` cannot be run by `{subcommand}` (accepted: {})",
            cfg.kind.as_str(),
            accepted.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(", "),
        )));
    }
    Ok(cfg)
}

/// Output base path: --out flag beats the config's `out` field beats
/// `out/<kind>`. `.jsonl` and `.csv` are appended to whatever wins.
pub fn resolve_out(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.out {
        return PathBuf::from(p);
    }
    PathBuf::from("out").join(cfg.kind.as_str())
}

/// Wraps output IO problems as run-level (exit 1) errors.
pub fn io_run_err(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Run(format!("{context}: {e}"))
}

//! Config-driven orchestration of calibration and benchmarking runs.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiment;
pub mod output;

use std::path::Path;

pub use config::{ExperimentConfig, Profile};
pub use error::CliError;
pub use experiment::{run, BenchProtocol, CalibrateMode, Command, RunOutput};

/// Parses and validates a config file.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, String), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let cfg = ExperimentConfig::parse(&text).map_err(CliError::Validation)?;
    cfg.validate().map_err(CliError::Validation)?;
    Ok((cfg, text))
}

/// Applies CLI overrides, runs the command and writes all outputs to `out`.
pub fn execute(
    mut cfg: ExperimentConfig,
    command: Command,
    seed: Option<u64>,
    profile: Option<Profile>,
    out: &Path,
) -> Result<RunOutput, CliError> {
    let started = output::now_rfc3339();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let profile = cfg.effective_profile(profile);
    cfg.profile = Some(profile);
    let effective = cfg.to_toml();
    let hash = output::sha256_hex(effective.as_bytes());
    let result = run(&cfg, command, profile, hash)?;
    let label = serde_json::to_value(command).expect("command serializes");
    let label = [label.get("command"), label.get("mode")]
        .iter()
        .flatten()
        .filter_map(|v| v.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    output::write_outputs(out, &result, &effective, &label, started)?;
    Ok(result)
}

//! Command-line driver: run configuration, commands, logs and plots.

pub mod commands;
pub mod config;
pub mod error;
pub mod logs;
pub mod svg;

pub use commands::{run, Command};
pub use config::RunConfig;
pub use error::{CliError, ErrorKind};

/// Builds the effective config: defaults, then the `--config` file, then
/// positional `key=value` overrides (a bare word names the environment
/// where the command accepts one), then `--seed` and `--out`.
pub fn resolve(cmd: Command, file: Option<&str>, args: &[String], seed: Option<u64>, out: Option<&str>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(text) = file {
        cfg.apply_text(text)?;
    }
    for a in args {
        if a.contains('=') {
            cfg.set_pair(a)?;
        } else if cmd.takes_env() {
            cfg.set("env", a)?;
        } else {
            return Err(CliError::config(format!("{} takes only key=value arguments, got {a:?}", cmd.name())));
        }
    }
    if let Some(s) = seed {
        cfg.set("seed", &s.to_string())?;
    }
    if let Some(o) = out {
        cfg.set("out", o)?;
    }
    Ok(cfg)
}

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vqbet_cli::{resolve, run, CliError, Command};

/// Residual-VQ behavior policy: data generation, training, rollout and
/// evaluation.
#[derive(Parser)]
#[command(name = "vqbet", version)]
struct Cli {
    /// Run configuration file of key=value lines.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<String>,
    /// Seed for data generation, training and rollouts.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Rest {
    /// key=value overrides; a bare word names the environment.
    #[arg(value_name = "ARGS")]
    args: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate scripted demonstrations as a VQBD dataset.
    GenData(Rest),
    /// Train the action tokenizer.
    TrainRvq(Rest),
    /// Train the policy against a frozen tokenizer.
    TrainPolicy(Rest),
    /// Roll out the policy; writes traces, episodes and a report.
    Rollout(Rest),
    /// Recompute the report from saved episodes, optionally with timing.
    Eval(Rest),
    /// Decode every code tuple to an action centroid.
    InspectCodebook(Rest),
    /// Plot rollout traces and training curves as SVG.
    Plot(Rest),
}

fn execute(cli: Cli) -> Result<serde_json::Value, CliError> {
    let (cmd, rest) = match cli.command {
        Cmd::GenData(r) => (Command::GenData, r),
        Cmd::TrainRvq(r) => (Command::TrainRvq, r),
        Cmd::TrainPolicy(r) => (Command::TrainPolicy, r),
        Cmd::Rollout(r) => (Command::Rollout, r),
        Cmd::Eval(r) => (Command::Eval, r),
        Cmd::InspectCodebook(r) => (Command::InspectCodebook, r),
        Cmd::Plot(r) => (Command::Plot, r),
    };
    let text = match &cli.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| CliError::config(format!("reading {p}: {e}")))?),
        None => None,
    };
    let cfg = resolve(cmd, text.as_deref(), &rest.args, cli.seed, cli.out.as_deref())?;
    run(cmd, &cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", CliError::config(first).to_line());
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

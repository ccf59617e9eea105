use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use collabdqn::commands;
use collabdqn::config::{ReportFormat, RunConfig};
use collabdqn::Result;

/// Collaborative multi-agent deep Q-learning for landmark localization in
/// 3D volumes.
#[derive(Parser)]
#[command(name = "collabdqn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args)]
struct Shared {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for both data synthesis and training.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Use a single worker thread everywhere.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Overwrite a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    /// Override one configuration key, e.g. `--set train.steps=500`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its manifest to paths.data_dir.
    Generate,
    /// Train on the train split; writes the checkpoint and a JSON-lines log.
    Train {
        /// Continue from paths.checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate the checkpoint on the test split and write reports.
    Evaluate {
        /// Report files to write.
        #[arg(long, value_enum)]
        format: Option<ReportFormat>,
    },
    /// Print the layers and parameter counts of a checkpoint.
    Inspect {
        /// Defaults to paths.checkpoint.
        checkpoint: Option<PathBuf>,
    },
}

fn config(shared: &Shared) -> Result<RunConfig> {
    let mut overrides = shared.set.clone();
    if let Some(seed) = shared.seed {
        overrides.push(format!("synth.seed={seed}"));
        overrides.push(format!("train.seed={seed}"));
    }
    if shared.deterministic {
        overrides.push("deterministic=true".into());
    }
    RunConfig::load(shared.config.as_deref(), &overrides)
}

fn run(cli: Cli) -> Result<()> {
    let mut config = config(&cli.shared)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Generate => commands::generate(&config, cli.shared.force, &mut out).map(drop),
        Command::Train { resume } => {
            config.checkpoint.resume |= resume;
            commands::train(&config, &mut out).map(drop)
        }
        Command::Evaluate { format } => {
            let format = format.unwrap_or(config.evaluate.format);
            commands::evaluate(&config, format, &mut out).map(drop)
        }
        Command::Inspect { checkpoint } => {
            let path = checkpoint.unwrap_or(config.paths.checkpoint);
            commands::inspect(&path, &mut out)
        }
    }
}

fn main() -> ExitCode {
    let keys = format!("Configuration keys and defaults:\n{}", RunConfig::defaults_listing());
    let cmd = Cli::command().after_help(keys.clone()).mut_subcommands(|s| s.after_help(keys.clone()));
    let cli = match cmd.try_get_matches().and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = io::stdout().flush();
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! `isd`: command-line runner for training, distillation, evaluation and
//! the desk-scale experiments.

mod commands;
mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::OutDir;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "isd", version, about = "Similarity-distillation lab with MoCo and BYOL baselines")]
struct Cli {
    /// Flat key = value config file applied over the subcommand defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Per-field override, applied after the config file. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory [default: runs/<subcommand>].
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Sets every seed (init, order, augment, data).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train ISD, MoCo or BYOL from scratch.
    Train,
    /// Distill a frozen teacher checkpoint into a fresh student.
    Distill {
        #[arg(long, value_name = "PATH")]
        teacher: PathBuf,
    },
    /// k-NN, recall@k and linear-probe metrics of a checkpoint.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Sweep the ISD temperature and emit the accuracy curve.
    AblateTemperature,
    /// Unbalanced-data comparison of ISD against MoCo.
    Unbalanced {
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Write a gaussian-mixture train/eval pair.
    GenData {
        #[arg(long)]
        classes: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Distill { .. } => "distill",
            Command::Eval { .. } => "eval",
            Command::AblateTemperature => "ablate-temperature",
            Command::Unbalanced { .. } => "unbalanced",
            Command::GenData { .. } => "gen-data",
        }
    }

    fn defaults(&self) -> RunConfig {
        match self {
            Command::AblateTemperature | Command::Unbalanced { .. } => RunConfig::experiment_defaults(),
            _ => RunConfig::default(),
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = cli.command.defaults();
    if let Some(path) = &cli.config {
        let text = read_config(path)?;
        config.apply_text(&text)?;
    }
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        config.set(k.trim(), v.trim()).map_err(|e| CliError::Config(format!("--set {kv}: {e}")))?;
    }
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    match cli.command {
        Command::Unbalanced { reps: Some(r) } => config.reps = r,
        Command::GenData { classes: Some(c) } => config.data_classes = c,
        _ => {}
    }
    config.train_config().validate()?;
    Ok(config)
}

fn read_config(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::ConfigNotFound(path.to_path_buf()),
        _ => CliError::Config(format!("{}: {e}", path.display())),
    })
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let config = resolve(cli)?;
    let dir = cli.out.clone().unwrap_or_else(|| Path::new("runs").join(cli.command.name()));
    let out = OutDir::create(&dir)?;
    out.echo_config(&config)?;
    match &cli.command {
        Command::Train => commands::run_train(&config, &out),
        Command::Distill { teacher } => commands::run_distill(&config, teacher, &out),
        Command::Eval { checkpoint } => commands::run_eval(&config, checkpoint, &out),
        Command::AblateTemperature => commands::run_ablation(&config, &out),
        Command::Unbalanced { .. } => commands::run_unbalanced(&config, &out),
        Command::GenData { .. } => commands::run_gen_data(&config, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::error;

mod commands;
mod config;
mod train;

/// Failures with a dedicated exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint not found: {}", .0.display())]
    MissingCheckpoint(PathBuf),
}

#[derive(Parser)]
#[command(name = "swwae", version, about = "Stacked what-where autoencoders: training, evaluation and inversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    #[value(name = "4")]
    Four,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SwitchArg {
    Known,
    Fixed,
}

#[derive(Subcommand)]
enum Command {
    /// Run training phases, writing checkpoints and metrics under out_dir.
    Train {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        phase: PhaseArg,
        /// Continue from a checkpoint written during a phase.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Top-1/top-5 accuracy and reconstruction error of a checkpoint.
    Eval {
        config: PathBuf,
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Reconstruct test images from the activations of one macro-layer.
    Invert {
        config: PathBuf,
        checkpoint: PathBuf,
        #[arg(long)]
        layer: usize,
        #[arg(long, value_enum, default_value = "known")]
        switches: SwitchArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every variant and switch mode on a tiny network.
    Gradcheck {
        /// Optional run config; only its seed is used.
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Config(_) => 2,
                CliError::MissingCheckpoint(_) => 3,
            };
        }
        if let Some(e) = cause.downcast_ref::<swwae::Error>() {
            match e {
                swwae::Error::InvalidConfig(_) => return 2,
                swwae::Error::Diverged { .. } => return 4,
                _ => {}
            }
        }
    }
    1
}

fn init_threads() -> anyhow::Result<()> {
    if let Some(v) = std::env::var_os("SWWAE_THREADS") {
        let n: usize = v
            .to_str()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::Config(format!("SWWAE_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    init_threads()?;
    match cli.command {
        Command::Train { config, phase, resume } => train::cmd_train(&config, phase, resume.as_deref()).map(|_| true),
        Command::Eval {
            config,
            checkpoint,
            split,
        } => commands::cmd_eval(&config, &checkpoint, split).map(|_| true),
        Command::Invert {
            config,
            checkpoint,
            layer,
            switches,
            out,
        } => commands::cmd_invert(&config, &checkpoint, layer, switches, &out).map(|_| true),
        Command::Gradcheck { config, tolerance } => commands::cmd_gradcheck(config.as_deref(), tolerance),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

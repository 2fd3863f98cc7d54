//! `dtd`: drop temporally redundant video tokens.

mod commands;
mod input;
mod options;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::options::EngineArgs;

#[derive(Parser, Debug)]
#[command(name = "dtd", version, about = "Drop temporally redundant video tokens")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Drop redundant tokens and write the slim stream
    Drop {
        /// RVF1 video, TKE1 embeddings, image directory, or - for stdin
        input: PathBuf,
        /// Slim token stream (STK1)
        #[arg(short, long)]
        output: PathBuf,
        /// Drop masks (DMK1)
        #[arg(long)]
        masks: Option<PathBuf>,
        /// Per-step timeline (NDJSON)
        #[arg(long)]
        timeline: Option<PathBuf>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Per-step drop-ratio curve
    Analyze {
        input: PathBuf,
        /// Per-step timeline (NDJSON)
        #[arg(long)]
        timeline: Option<PathBuf>,
        /// Two-column step/ratio data
        #[arg(long)]
        curve: Option<PathBuf>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// List trigger events
    Triggers {
        input: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Read RVF1 from stdin and emit one JSON record per step
    Stream {
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Time the engine over an input held in memory
    Bench {
        input: PathBuf,
        #[arg(long, default_value_t = 3)]
        repeat: usize,
        /// Modes to compare, comma separated; defaults to --mode
        #[arg(long, value_delimiter = ',')]
        modes: Vec<String>,
        #[command(flatten)]
        engine: EngineArgs,
    },
}

fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("DTD_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("DTD_THREADS: expected a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("DTD_THREADS: configuring the thread pool")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match &cli.command {
        Command::Drop {
            input,
            output,
            masks,
            timeline,
            engine,
        } => commands::drop(
            commands::DropArgs {
                input,
                output,
                masks: masks.as_ref(),
                timeline: timeline.as_ref(),
            },
            engine,
        ),
        Command::Analyze {
            input,
            timeline,
            curve,
            engine,
        } => commands::analyze(input, timeline.as_ref(), curve.as_ref(), engine),
        Command::Triggers { input, engine } => commands::triggers(input, engine),
        Command::Stream { engine } => commands::stream(engine),
        Command::Bench {
            input,
            repeat,
            modes,
            engine,
        } => commands::bench(input, *repeat, modes, engine),
    }
}

/// Exit status per error class; 2 is left to argument parsing.
fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<dtd_core::Error>()) else {
        return if err.chain().any(|c| c.is::<std::io::Error>()) {
            8
        } else {
            1
        };
    };
    match e {
        dtd_core::Error::InputShape(_) => 3,
        dtd_core::Error::Data(_) => 4,
        dtd_core::Error::Config { .. } => 5,
        dtd_core::Error::Sequence { .. } => 6,
        dtd_core::Error::Format(_) => 7,
        dtd_core::Error::Io(_) => 8,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // a closed stdout (e.g. piping into `head`) is not worth reporting
            if let Some(io) = err.downcast_ref::<std::io::Error>() {
                if io.kind() == std::io::ErrorKind::BrokenPipe {
                    return ExitCode::SUCCESS;
                }
            }
            eprintln!("dtd: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

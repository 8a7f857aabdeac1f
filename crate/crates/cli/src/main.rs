//! `dialsec`: batch driver for weak labeling, bootstrapping and cluster
//! refinement rounds, plus the annotation service.
//!
//! Results go to stdout as JSON (the report as markdown); logs and the
//! error record of a failed run go to stderr.

mod commands;
mod config;
mod error;
mod project;

use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use crate::commands::AnnotatorMode;
use crate::config::{ProjectConfig, FILE_NAME};
use crate::error::CliError;
use crate::project::Project;

#[derive(Parser, Debug)]
#[command(name = "dialsec", version, about = "Functional section labeling for two-party dialogues")]
struct Cli {
    /// Project directory holding the config file.
    #[arg(long, global = true, default_value = ".")]
    project: PathBuf,
    /// Config file; defaults to <project>/dialsec.toml.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = LogFormat::Json)]
    log_format: LogFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LogFormat {
    Json,
    Text,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write an annotated default config into the project directory.
    Init {
        #[arg(long)]
        force: bool,
    },
    /// Validate a corpus and store its normalized copy in the work directory.
    Ingest {
        /// Defaults to the configured corpus.
        corpus: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with sentence-level ground truth.
    Synth {
        /// Generator settings (TOML).
        config: PathBuf,
        /// Output directory; defaults to the project directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cluster turns, collect verdicts and build the weak turn dataset.
    WeakLabel {
        #[arg(long)]
        gold: Option<PathBuf>,
        /// JSONL of {task_id, verdict}; replaces the simulated annotator.
        #[arg(long)]
        verdicts: Option<PathBuf>,
    },
    /// Train the turn model on the weak dataset.
    TrainTurn,
    /// Label every professional sentence from the turn model and train the
    /// first sentence model.
    Bootstrap,
    /// Refinement rounds.
    Round {
        #[command(subcommand)]
        command: RoundCommand,
    },
    /// Serve round k to annotators until interrupted.
    Serve {
        #[arg(long)]
        round: usize,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Score a completed round against ground truth.
    Evaluate {
        #[arg(long)]
        round: usize,
        #[arg(long)]
        gold: PathBuf,
    },
    /// Tables across completed rounds; several project directories give
    /// mean and spread over their runs.
    Report {
        #[arg(long, num_args = 1..)]
        runs: Vec<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum RoundCommand {
    /// Cluster, collect verdicts for and finalize round k.
    Run {
        k: usize,
        #[arg(long, value_enum, default_value_t = AnnotatorMode::Simulated)]
        annotator: AnnotatorMode,
        #[arg(long)]
        gold: Option<PathBuf>,
        /// Bind address with `--annotator serve`.
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

fn init_logging(format: LogFormat) {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"));
    let builder = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr);
    let _ = match format {
        LogFormat::Json => builder.json().try_init(),
        LogFormat::Text => builder.try_init(),
    };
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config_path = cli.config.clone().unwrap_or_else(|| cli.project.join(FILE_NAME));
    let load = || -> Result<Project, CliError> { Ok(Project::new(ProjectConfig::load(&config_path)?, cli.seed)) };
    let value = match &cli.command {
        Command::Init { force } => commands::init(&cli.project, *force)?,
        Command::Synth { config, out } => {
            let seed = match cli.seed {
                Some(s) => s,
                None => ProjectConfig::load(&config_path).map(|c| c.seed).unwrap_or(0),
            };
            commands::synth(config, out.as_ref().unwrap_or(&cli.project), seed)?
        }
        Command::Ingest { corpus } => commands::ingest(&load()?, corpus.as_deref())?,
        Command::WeakLabel { gold, verdicts } => commands::weak_label_cmd(&load()?, gold.as_deref(), verdicts.as_deref())?,
        Command::TrainTurn => commands::train_turn(&load()?)?,
        Command::Bootstrap => commands::bootstrap(&load()?)?,
        Command::Round {
            command: RoundCommand::Run { k, annotator, gold, addr },
        } => commands::round_run(&load()?, *k, *annotator, *addr, gold.as_deref())?,
        Command::Serve { round, addr } => commands::serve(&load()?, *round, *addr, false)?,
        Command::Evaluate { round, gold } => commands::evaluate(&load()?, *round, gold)?,
        Command::Report { runs } => {
            let text = commands::report(&load()?, runs)?;
            print!("{text}");
            return Ok(());
        }
    };
    println!("{value}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let err = CliError::usage(e.to_string().trim_end());
            let _ = writeln!(std::io::stderr(), "{}", err.record());
            return ExitCode::from(err.exit_code());
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    init_logging(cli.log_format);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            tracing::error!(code = err.code, "{}", err.message);
            let _ = writeln!(std::io::stderr(), "{}", err.record());
            ExitCode::from(err.exit_code())
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod output;
mod plot;

use config::Preset;

/// Power control for energy-harvesting transmitters: optimal baselines,
/// learning agents and evaluation sweeps.
#[derive(Debug, Parser)]
#[command(name = "ehpc", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Base preset; overrides the config.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Comma-separated scheme names, e.g. OPT,RCA,ELK-RCA.
    #[arg(long, global = true, value_delimiter = ',')]
    schemes: Option<Vec<String>>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Cache directory for solved baselines.
    #[arg(long, global = true, env = "EHPC_CACHE_DIR")]
    cache: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve and cache the optimal baselines and print their gains.
    Solve(commands::SolveArgs),
    /// Run the evaluation sweep and write CSV, summary and OMF series files.
    Sweep,
    /// Render OMF series files as SVG plots.
    Plot(plot::PlotArgs),
    /// Print the loss table of a finished sweep.
    Report,
}

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(String),
    Partial(usize),
    Other(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Partial(_) => 4,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(e.into())
    }
}

impl From<config::ConfigError> for CliError {
    fn from(e: config::ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    let file = match &g.config {
        Some(p) => config::ExperimentConfig::load(p)?,
        None => config::ExperimentConfig::default(),
    };
    let flags = config::Overrides {
        preset: g.preset,
        seed: g.seed,
        schemes: g.schemes.clone(),
        output_dir: g.out.clone(),
        cache_dir: g.cache.clone(),
    };
    if let Some(n) = g.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Other(e.into()))?;
    }
    match &cli.command {
        Command::Solve(args) => commands::solve(&file, &flags, args),
        Command::Sweep => commands::sweep(&file.resolve(&flags)?),
        Command::Plot(args) => plot::plot(&file, &flags, args),
        Command::Report => commands::report(&file, &flags),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Config(m) => eprintln!("config error: {m}"),
                CliError::Solver(m) => eprintln!("solver error: {m}"),
                CliError::Partial(n) => eprintln!("{n} cell(s) failed; see the summary for details"),
                CliError::Other(err) => eprintln!("error: {err:#}"),
            }
            ExitCode::from(e.code())
        }
    }
}

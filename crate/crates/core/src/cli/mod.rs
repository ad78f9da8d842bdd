//! `supermix` command-line driver.
//!
//! Exit codes: 0 success, 1 numerical failure (including non-convergence), 2 usage or configuration error.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use commands::{OutputDir, Outcome, FIGURE1_SEED};
use config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "supermix", version, about = "Grid-less mixing-measure estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw one sample CSV per seed.
    Simulate(CommonArgs),
    /// Sliding Frank-Wolfe on each seed.
    Sfw(CommonArgs),
    /// Conic particle gradient descent on each seed.
    Cpgd(CommonArgs),
    /// Build and audit the interpolating certificate.
    Certify(CommonArgs),
    /// Error-versus-n sweep with a log-log slope.
    Rates(CommonArgs),
    /// The three-spike particle descent run with fixed parameters.
    Figure1(Figure1Args),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct Figure1Args {
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = FIGURE1_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 2500)]
    pub steps: usize,
    #[arg(long, default_value_t = 20)]
    pub particles: usize,
    #[arg(long)]
    pub force: bool,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InvalidParameter(_)
        | Error::InsufficientGrid(_)
        | Error::Json(_)
        | Error::DimensionMismatch { .. }
        | Error::LengthMismatch { .. }
        | Error::InvalidMeasure(_)
        | Error::Empty(_)
        | Error::BandMismatch { .. }
        | Error::OverlappingRegions { .. } => 2,
        _ => 1,
    }
}

type CommandFn = fn(&ExperimentConfig, &mut OutputDir) -> Result<Outcome>;

fn execute(name: &'static str, cfg: ExperimentConfig, out: PathBuf, force: bool, f: CommandFn) -> Result<Outcome> {
    let mut dir = OutputDir::open(&out, name, cfg.hash(), force)?;
    let outcome = f(&cfg, &mut dir)?;
    let files = dir.finish()?;
    Ok(Outcome { files, ..outcome })
}

fn run_common(name: &'static str, args: CommonArgs, f: CommandFn) -> Result<Outcome> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    let out = args
        .out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    execute(name, cfg, out, args.force, f)
}

pub fn dispatch(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Simulate(a) => run_common("simulate", a, commands::cmd_simulate),
        Command::Sfw(a) => run_common("sfw", a, commands::cmd_sfw),
        Command::Cpgd(a) => run_common("cpgd", a, commands::cmd_cpgd),
        Command::Certify(a) => run_common("certify", a, commands::cmd_certify),
        Command::Rates(a) => run_common("rates", a, commands::cmd_rates),
        Command::Figure1(a) => {
            let cfg = commands::figure1_config(a.seed, a.steps, a.particles);
            execute("figure1", cfg, a.out, a.force, commands::cmd_figure1)
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if outcome.converged {
                0
            } else {
                eprintln!("error: a solve stopped before reaching its tolerance");
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

//! `erm-asym`: config-driven runs of the fixed-point theory against Monte
//! Carlo ERM.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 numerical
//! failure or non-convergence (output files are still written when the
//! solver ran to its iteration cap).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "erm-asym", version, about = "High-dimensional ERM asymptotics: theory against simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the fixed-point system and write solution.json.
    Solve(Common),
    /// Theory against R replicated fits: comparison.csv and comparison.json.
    Compare(Common),
    /// Error curves over a lambda or shift-angle grid: sweep.csv and sweep.json.
    Sweep(Common),
    /// Score histogram with predicted and Gaussian-baseline densities.
    ScoreHist(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out` in the config; default `out`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Master seed (overrides `seed` in the config)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
        }
    }
}

/// A subcommand body: `Ok(false)` means it ran but did not converge.
type Action = fn(&config::Config, &std::path::Path) -> Result<bool, CliError>;

fn run(command: Command) -> Result<bool, CliError> {
    let (common, action): (Common, Action) = match command {
        Command::Solve(c) => (c, commands::solve_cmd),
        Command::Compare(c) => (c, commands::compare_cmd),
        Command::Sweep(c) => (c, commands::sweep_cmd),
        Command::ScoreHist(c) => (c, commands::score_hist_cmd),
    };
    if let Some(k) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let mut cfg = config::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = common.out {
        cfg.out = Some(out);
    }
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    action(&cfg, &out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("warning: the fixed-point iteration did not converge; see the written diagnostics");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(match e {
                CliError::Config(_) | CliError::Io(_) => 1,
                CliError::Numerical(_) => 2,
            })
        }
    }
}

//! `spinid`: reproducible simulation, fitting and identification runs driven by JSON configs.
//!
//! Exit status: 0 success, 1 I/O or numerical failure, 2 validation, 3 non-convergence,
//! 4 inconsistent measurement set.

mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "spinid", version, about = "Spin-defect simulation, fitting and identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config, or a manifest.json from an earlier run of the same command.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "spinid-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a pulse sequence and write trace.csv.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Noise seed; overrides the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a trace and write fit.json.
    Fit {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Extract hyperfine values, scan orientations and rank species and defects.
    Identify {
        #[command(flatten)]
        run: RunArgs,
        /// Residual-map grid spacing in degrees; overrides the config.
        #[arg(long)]
        grid_deg: Option<f64>,
    },
    /// Residual map ε(θ, φ) for a given hyperfine pair and nuclear γ.
    ScanResidual {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        grid_deg: Option<f64>,
    },
    /// Defect database utilities.
    DefectDb {
        #[command(subcommand)]
        action: DbAction,
    },
}

#[derive(Subcommand)]
enum DbAction {
    /// Print the defect table as CSV.
    List {
        /// Table to read instead of the data directory's defect_db.csv or the built-in one.
        #[arg(long)]
        db: Option<PathBuf>,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { run, seed } => run::simulate(&run.config, &run.out, *seed),
        Command::Fit { run } => run::fit(&run.config, &run.out),
        Command::Identify { run, grid_deg } => run::identify_cmd(&run.config, &run.out, *grid_deg),
        Command::ScanResidual { run, grid_deg } => run::scan_residual(&run.config, &run.out, *grid_deg),
        Command::DefectDb { action: DbAction::List { db, out } } => run::defect_db_list(db.as_deref(), out.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

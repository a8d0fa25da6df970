use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pnc_cli::commands::{self, BackfitArgs, BootstrapArgs, CompareArgs, FitArgs, GeodesicArgs, SimulateArgs};
use pnc_cli::Result;

/// Principal nested cones for size-and-shape data.
#[derive(Parser)]
#[command(name = "pnc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit nested cones and write the model and scores.
    Fit(FitArgs),
    /// Reconstruct data from scores, or trace one score at the mean size.
    Backfit(BackfitArgs),
    /// Write a synthetic dataset.
    Simulate(SimulateArgs),
    /// Percentile confidence intervals for the model parameters.
    Bootstrap(BootstrapArgs),
    /// Reconstruction error of PNC, PNS and PCA over an (alpha, sigma) grid.
    Compare(CompareArgs),
    /// Distance between two points along a cone.
    Geodesic(GeodesicArgs),
}

fn run(cli: Cli) -> Result<()> {
    commands::configure_threads()?;
    match cli.command {
        Command::Fit(a) => commands::run_fit(&a),
        Command::Backfit(a) => commands::run_backfit(&a),
        Command::Simulate(a) => commands::run_simulate(&a),
        Command::Bootstrap(a) => commands::run_bootstrap(&a),
        Command::Compare(a) => commands::run_compare(&a),
        Command::Geodesic(a) => {
            println!("{}", commands::run_geodesic(&a)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

//! Command line front end for the ot-steady solvers.
//!
//! Every run resolves its settings from defaults, an optional preset, an
//! optional flat `key = value` config file, and command line flags, in that
//! order of increasing precedence, then writes its outputs plus a manifest
//! of the resolved configuration under `--out`. Identical configurations
//! and seeds produce byte-identical files.

use clap::Parser;
use std::process::ExitCode;

mod cmd_nk;
mod cmd_oracle;
mod cmd_sweep;
mod cmd_wadam;
mod config;
mod output;

pub(crate) const EXIT_OK: u8 = 0;
pub(crate) const EXIT_ERROR: u8 = 1;
pub(crate) const EXIT_BUDGET: u8 = 2;
pub(crate) const EXIT_USAGE: u8 = 64;

/// How a command failed: `Usage` covers unknown or malformed flags and
/// config keys (exit 64), `Run` everything that went wrong while actually
/// computing (exit 1).
#[derive(Debug)]
pub(crate) enum Failure {
    Usage(String),
    Run(String),
}

impl From<ot_steady::Error> for Failure {
    fn from(e: ot_steady::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "ot-steady",
    version,
    about = "Steady states of stochastic particle timesteppers",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Subcommand)]
enum Cmd {
    /// Wasserstein gradient descent with Adam on a particle ensemble
    Wadam(cmd_wadam::WadamArgs),
    /// Newton-Krylov on the finite-volume mean-field timestepper
    NkPde(cmd_nk::PdeArgs),
    /// Newton-Krylov on a percentile-grid inverse CDF (1D models)
    NkIcdf(cmd_nk::IcdfArgs),
    /// Newton-Krylov on a gridded 2D CDF
    NkCdf2d(cmd_nk::Cdf2Args),
    /// Newton-Krylov on a 2D CDF resampled through sliced projections
    NkSliced(cmd_nk::SlicedArgs),
    /// Write analytic steady-state references for a model
    Oracle(cmd_oracle::OracleArgs),
    /// Error of the finite-difference JVP across a list of step sizes
    EpsSweep(cmd_sweep::SweepArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    ot_steady::configure_threads_from_env();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                EXIT_OK
            } else {
                EXIT_USAGE
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match cli.cmd {
        Cmd::Wadam(a) => cmd_wadam::run(a),
        Cmd::NkPde(a) => cmd_nk::run_pde(a),
        Cmd::NkIcdf(a) => cmd_nk::run_icdf(a),
        Cmd::NkCdf2d(a) => cmd_nk::run_cdf2(a),
        Cmd::NkSliced(a) => cmd_nk::run_sliced(a),
        Cmd::Oracle(a) => cmd_oracle::run(a),
        Cmd::EpsSweep(a) => cmd_sweep::run(a),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

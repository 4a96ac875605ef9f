//! Command-line driver for `geoflow-core`: configuration, initial data and run output.

pub mod commands;
pub mod error;
pub mod output;
pub mod settings;

use std::ffi::OsString;

use clap::{Args, Parser, Subcommand};

pub use error::CliError;
pub use output::{read_snapshot, Snapshot};
pub use settings::{CommonArgs, MetricSpec, Settings};

#[derive(Debug, Parser)]
#[command(name = "geoflow", version, about = "Schrödinger map flow solver and diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evolve one trajectory and write diagnostics, snapshots and a manifest
    Run(CommonArgs),
    /// Fit the spin-wave frequency from an epsilon = 0 run
    Dispersion(CommonArgs),
    /// Compare regularized runs against the epsilon = 0 flow
    Continuation(ContinuationArgs),
    /// Mode sweeps for the gauge operator
    GaugeReport(GaugeArgs),
    /// Quick invariant checks on small grids
    Selftest,
}

#[derive(Debug, Args)]
pub struct ContinuationArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// strictly decreasing, each in (0, 1]
    #[arg(long, value_delimiter = ',')]
    pub eps_list: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct GaugeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// largest probe mode (powers of two from 1)
    #[arg(long)]
    pub modes_max: Option<usize>,
}

/// Applies `GEOFLOW_THREADS` to the global rayon pool. Only the first call can
/// size the pool; later calls are no-ops.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("GEOFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("GEOFLOW_THREADS must be a positive integer, got '{raw}'")))?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Run(a) => commands::run(&Settings::resolve(&a)?),
        Command::Dispersion(a) => commands::dispersion(&Settings::resolve(&a)?),
        Command::Continuation(a) => commands::continuation(&Settings::resolve(&a.common)?, a.eps_list),
        Command::GaugeReport(a) => commands::gauge_report(&Settings::resolve(&a.common)?, a.modes_max),
        Command::Selftest => commands::selftest(),
    }
}

/// Parses `args` (including the program name) and runs; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("geoflow: {e}");
            e.exit_code()
        }
    }
}

//! Command-line front end for the weak-coherent-pulse BB84 key-rate
//! toolkit: analytic rate evaluation, distance sweeps, Monte Carlo runs,
//! decoy-state estimation and an identity verification suite.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration error,
//! 3 runtime/data error.

mod commands;
mod config;
mod format;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CmdError, OutputOpts};
use config::{OutputFormat, RunConfig};

#[derive(Parser)]
#[command(
    name = "qkd-rates",
    version,
    about = "Key-rate bounds, channel model, Monte Carlo simulation and \
             decoy-state estimation for weak-coherent-pulse BB84"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate both key-rate bounds for the configured scenario.
    Rate {
        #[arg(long)]
        config: PathBuf,
        /// Output destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<OutputFormat>,
        /// Zero out negative rates in the report.
        #[arg(long)]
        clamp: bool,
    },
    /// Sweep the fiber length and report rates per distance as CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Start of the distance range, km.
        #[arg(long, default_value_t = 0.0)]
        from: f64,
        /// End of the distance range, km.
        #[arg(long)]
        to: f64,
        /// Step, km.
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<OutputFormat>,
        #[arg(long)]
        clamp: bool,
    },
    /// Run the Monte Carlo simulation and write tallies plus empirical rates.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Override the seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate decoy-state bounds and the certified pessimistic rate.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        /// Observations file: a simulate report, an observable view or a
        /// JSON list of observations. Analytic observations from the
        /// channel model are used when absent.
        #[arg(long)]
        observations: Option<PathBuf>,
        /// Also run the linear-program cross-check.
        #[arg(long)]
        lp: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the identity verification suite.
    Verify {
        /// Seed for the randomized checks.
        #[arg(long)]
        seed: Option<u64>,
        /// Flip a sign inside the suite to prove it detects faults.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Print the default configuration as JSON.
    Defaults {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CmdError> {
    match cli.command {
        Command::Rate {
            config,
            out,
            format,
            clamp,
        } => {
            let cfg = RunConfig::load(&config).map_err(CmdError::Config)?;
            let opts = OutputOpts::resolve(&cfg, format, out, clamp);
            commands::cmd_rate(&cfg, &opts)
        }
        Command::Sweep {
            config,
            from,
            to,
            step,
            out,
            format,
            clamp,
        } => {
            let cfg = RunConfig::load(&config).map_err(CmdError::Config)?;
            let opts = OutputOpts::resolve(&cfg, format.or(Some(OutputFormat::Csv)), out, clamp);
            commands::cmd_sweep(&cfg, from, to, step, &opts)
        }
        Command::Simulate { config, seed, out } => {
            let cfg = RunConfig::load(&config).map_err(CmdError::Config)?;
            commands::cmd_simulate(&cfg, seed, out)
        }
        Command::Estimate {
            config,
            observations,
            lp,
            out,
        } => {
            let cfg = RunConfig::load(&config).map_err(CmdError::Config)?;
            commands::cmd_estimate(&cfg, observations, lp, out)
        }
        Command::Verify { seed, inject_fault } => commands::cmd_verify(seed, inject_fault),
        Command::Defaults { out } => commands::cmd_defaults(out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CmdError::Config(msg) => eprintln!("configuration error: {msg}"),
                CmdError::Runtime(msg) => eprintln!("error: {msg}"),
                CmdError::Verification => {}
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! `pfrc`: simulate datasets and run particle filter experiments.

mod commands;
mod error;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;
use crate::settings::Settings;

#[derive(Parser)]
#[command(name = "pfrc", version, about = "Particle filters with rejection control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file whose keys mirror the long flags
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

impl Common {
    fn resolve(self) -> Result<Settings, CliError> {
        Settings::load(self.config.as_deref(), self.settings)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleKind {
    /// Exact LGSS log-likelihood
    Kalman,
    /// Exact HMM log-likelihood by the forward recursion
    Enumeration,
    /// Closed-form two-coin expectations
    Coin,
    /// Negative-binomial series for E[1/(P-1)]
    Negbin,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from the model
    Simulate(Common),
    /// Run a single sweep and print log Z and per-step counts
    Run(Common),
    /// Run M replicate sweeps and write summary and per-replicate CSVs
    Experiment(Common),
    /// Record the thresholds of one dynamic sweep as a fixed schedule
    Pilot(Common),
    /// Print exact reference values
    Oracle {
        #[arg(value_enum)]
        kind: OracleKind,
        /// Particle count N for the negative-binomial series
        #[arg(long, default_value_t = 1)]
        negbin_n: u64,
        /// Acceptance probability p for the negative-binomial series
        #[arg(long, default_value_t = 0.5)]
        negbin_p: f64,
        #[arg(long, default_value_t = 1e-12)]
        tolerance: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Compare per-sweep median thresholds with a fixed threshold on the
    /// two-coin example
    BiasDemo(Common),
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(c) => commands::simulate(&c.resolve()?),
        Command::Run(c) => commands::run(&c.resolve()?),
        Command::Experiment(c) => commands::experiment(&c.resolve()?),
        Command::Pilot(c) => commands::pilot(&c.resolve()?),
        Command::Oracle {
            kind,
            negbin_n,
            negbin_p,
            tolerance,
            common,
        } => {
            let s = common.resolve()?;
            match kind {
                OracleKind::Kalman => commands::oracle_kalman(&s),
                OracleKind::Enumeration => commands::oracle_enumeration(&s),
                OracleKind::Coin => commands::oracle_coin(),
                OracleKind::Negbin => commands::oracle_negbin(negbin_n, negbin_p, tolerance),
            }
        }
        Command::BiasDemo(c) => commands::bias_demo(&c.resolve()?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or_default();
            let err = CliError::Usage(first.trim_start_matches("error: ").to_string());
            eprint!("{e}");
            eprintln!("{}", err.machine_line());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.machine_line());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

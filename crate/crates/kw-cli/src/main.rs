//! `kwlat`: batch front end for the lattice Kazdan-Warner solvers.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kw_lattice::KwError;

use config::RunConfig;

/// Bad flags, config values or parameter combinations (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A verification ran to completion and found a violation (exit code 4).
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "check failed: {}", self.0)
    }
}

impl std::error::Error for CheckFailed {}

#[derive(Parser, Debug)]
#[command(name = "kwlat", version, about = "Lattice Green's tables, Kazdan-Warner solvers, sweeps and verification suites")]
pub struct Cli {
    /// Flat JSON config file; flags override its values
    #[arg(long, global = true, help_heading = "Paths")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunConfig,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
pub enum Command {
    /// Build or check the lattice Green's table
    #[command(subcommand)]
    Greens(GreensCmd),
    /// Run a single solve
    #[command(subcommand)]
    Solve(SolveCmd),
    /// Run a family of solves on a worker pool
    #[command(subcommand)]
    Sweep(SweepCmd),
    /// Run a verification suite
    #[command(subcommand)]
    Verify(VerifyCmd),
    /// Tabulate analytic thresholds
    #[command(subcommand)]
    Scan(ScanCmd),
}

#[derive(Subcommand, Debug, Clone, Copy)]
pub enum GreensCmd {
    /// Build (or load from cache) a table and export it as CSV
    Build,
    /// Compare a table against closed-form values
    Check,
}

#[derive(Subcommand, Debug, Clone, Copy)]
pub enum SolveCmd {
    /// -Delta u = e^{kappa u} + beta delta0 with total mass alpha
    Source,
    /// -Delta u + e^{kappa u} = beta delta0 with total mass alpha
    Absorption,
    /// Absorption at the critical mass alpha0 = 4pi/kappa
    Extremal,
}

#[derive(Subcommand, Debug, Clone, Copy)]
pub enum SweepCmd {
    /// Vary alpha (or sigma) at fixed kappa and beta
    Alpha,
    /// Vary beta at fixed kappa and alpha (or sigma)
    Beta,
    /// Vary kappa at fixed sigma (or alpha) and beta
    Kappa,
}

#[derive(Subcommand, Debug, Clone, Copy)]
pub enum VerifyCmd {
    /// Decay of Green's convolutions of compactly supported data
    Decay,
    /// Maximum principle on random Dirichlet problems
    Maxprinciple,
    /// Ordering and energies of an absorption family
    Layers,
    /// Barrier inequality and the construction of m0
    Barrier,
}

#[derive(Subcommand, Debug, Clone, Copy)]
pub enum ScanCmd {
    /// Threshold h0(sigma), its minimizer and kappa*
    Thresholds,
}

/// Exit code for an error chain: 2 argument, 3 nonconvergence, 4 consistency.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if cause.is::<CheckFailed>() {
            return 4;
        }
        if let Some(k) = cause.downcast_ref::<KwError>() {
            return match k {
                KwError::Argument(_) | KwError::Domain(_) | KwError::Precondition(_) => 2,
                KwError::NonConvergence { .. } | KwError::LinearSolver { .. } => 3,
                KwError::Consistency(_) | KwError::Construction(_) => 4,
                KwError::Io(_) | KwError::Csv(_) | KwError::Json(_) => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = (|| {
        let file = match &cli.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let cfg = config::merge(file, cli.run.clone());
        commands::run(cli.command, &cfg)
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

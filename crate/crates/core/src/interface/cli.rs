//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on any input or I/O error, 2 when `verify`
//! finds a bound violation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::commands::{self, SimulateOptions};
use crate::accountant::LambdaGrid;
use crate::error::{Error, Result};
use crate::mechanism::MechanismParams;
use crate::oracle::audit::AuditConfig;
use crate::simulation::{EnsembleConfig, ErrorModel};

pub const DEFAULT_SWEEP: [f64; 7] = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0];

#[derive(Debug, Parser)]
#[command(name = "pate", version, about = "Noisy-max teacher aggregation with moments accounting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Master seed; every random draw derives from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest moment order; bounds are tracked at 1..=lambda-max.
    #[arg(long, default_value_t = 8)]
    pub lambda_max: u32,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Release one noisy label per query and write the privacy ledger.
    Aggregate {
        /// Votes file (JSON Lines).
        votes: PathBuf,
        /// Inverse Laplace scale.
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        ledger: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Convert a ledger into (epsilon, delta) guarantees.
    Account {
        ledger: PathBuf,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        /// Write the guarantee JSON here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a synthetic teacher ensemble and report its privacy budget.
    Simulate {
        #[arg(long, default_value_t = 250)]
        n: u64,
        #[arg(long, default_value_t = 10)]
        m: usize,
        #[arg(long, default_value_t = 0.8386)]
        teacher_accuracy: f64,
        #[arg(long, value_enum, default_value_t = ErrorModelArg::Uniform)]
        error_model: ErrorModelArg,
        #[arg(long, default_value_t = 100)]
        queries: usize,
        #[arg(long, default_value_t = 0.05)]
        gamma: f64,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
        /// Comma-separated gammas for the accuracy sweep.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<f64>,
        /// Write the sweep CSV here (uses a default grid if --sweep is absent).
        #[arg(long)]
        sweep_out: Option<PathBuf>,
        /// Write the budget report JSON here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Check every privacy bound against exact quadrature and Monte Carlo.
    Verify {
        /// Monte Carlo trials per cross-checked histogram; 0 skips Monte Carlo.
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 1000)]
        histograms: usize,
        #[arg(long, default_value_t = 100)]
        mc_histograms: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Print human-readable tables for report, ledger-guarantee or sweep files.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ErrorModelArg {
    Uniform,
    Adjacent,
}

impl From<ErrorModelArg> for ErrorModel {
    fn from(arg: ErrorModelArg) -> Self {
        match arg {
            ErrorModelArg::Uniform => ErrorModel::UniformConfusion,
            ErrorModelArg::Adjacent => ErrorModel::AdjacentConfusion,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Aggregate,
    Account,
    Simulate,
    Verify,
    Report,
}

/// The flags shared by all subcommands, validated before anything runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: CommandKind,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub lambda_max: u32,
    pub seed: u64,
    pub trials: u64,
    pub input_paths: Vec<PathBuf>,
    pub output_paths: Vec<PathBuf>,
}

impl RunConfig {
    pub fn from_cli(cli: &Cli) -> Self {
        let base = |command| RunConfig {
            command,
            gamma: None,
            delta: None,
            lambda_max: 8,
            seed: 0,
            trials: 0,
            input_paths: Vec::new(),
            output_paths: Vec::new(),
        };
        match &cli.command {
            Command::Aggregate { votes, gamma, labels, ledger, common } => RunConfig {
                gamma: Some(*gamma),
                lambda_max: common.lambda_max,
                seed: common.seed,
                input_paths: vec![votes.clone()],
                output_paths: vec![labels.clone(), ledger.clone()],
                ..base(CommandKind::Aggregate)
            },
            Command::Account { ledger, delta, output } => RunConfig {
                delta: Some(*delta),
                input_paths: vec![ledger.clone()],
                output_paths: output.iter().cloned().collect(),
                ..base(CommandKind::Account)
            },
            Command::Simulate { gamma, delta, sweep_out, output, common, .. } => RunConfig {
                gamma: Some(*gamma),
                delta: Some(*delta),
                lambda_max: common.lambda_max,
                seed: common.seed,
                output_paths: sweep_out.iter().chain(output).cloned().collect(),
                ..base(CommandKind::Simulate)
            },
            Command::Verify { trials, output, common, .. } => RunConfig {
                lambda_max: common.lambda_max,
                seed: common.seed,
                trials: *trials,
                output_paths: output.iter().cloned().collect(),
                ..base(CommandKind::Verify)
            },
            Command::Report { files } => RunConfig {
                input_paths: files.clone(),
                ..base(CommandKind::Report)
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(gamma) = self.gamma {
            MechanismParams::new(gamma, self.seed)?;
        }
        if let Some(delta) = self.delta {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(Error::invalid(format!("--delta must lie in (0, 1), got {delta}")));
            }
        }
        LambdaGrid::up_to(self.lambda_max)?;
        for path in &self.input_paths {
            if !path.is_file() {
                return Err(Error::invalid(format!("input file {} does not exist", path.display())));
            }
        }
        for path in &self.output_paths {
            let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            if !parent.is_dir() {
                return Err(Error::invalid(format!(
                    "output directory {} does not exist",
                    parent.display()
                )));
            }
        }
        Ok(())
    }
}

/// What a successful run found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    BoundViolation,
}

impl Outcome {
    pub fn exit_code(self) -> ExitCode {
        match self {
            Outcome::Success => ExitCode::SUCCESS,
            Outcome::BoundViolation => ExitCode::from(2),
        }
    }
}

fn emit(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let config = RunConfig::from_cli(&cli);
    config.validate()?;
    let grid = LambdaGrid::up_to(config.lambda_max)?;
    match cli.command {
        Command::Aggregate { votes, gamma, labels, ledger, common } => {
            let params = MechanismParams::new(gamma, common.seed)?;
            let out = commands::aggregate(&votes, &labels, &ledger, &params, &grid)?;
            log::info!("released {} labels", out.labels.len());
        }
        Command::Account { ledger, delta, output } => {
            let report = commands::account(&ledger, delta)?;
            emit(&commands::to_json(&report)?, output.as_deref())?;
        }
        Command::Simulate {
            n,
            m,
            teacher_accuracy,
            error_model,
            queries,
            gamma,
            delta,
            sweep,
            sweep_out,
            output,
            common,
        } => {
            let sweep_gammas = match (&sweep_out, sweep.is_empty()) {
                (Some(_), true) => DEFAULT_SWEEP.to_vec(),
                _ => sweep,
            };
            let options = SimulateOptions {
                config: EnsembleConfig {
                    n,
                    m,
                    teacher_accuracy,
                    error_model: error_model.into(),
                    queries,
                    seed: common.seed,
                },
                gamma,
                delta,
                lambda_grid: grid,
                sweep_gammas,
            };
            let (budget, sweep) = commands::simulate(&options)?;
            if let (Some(path), Some(sweep)) = (&sweep_out, &sweep) {
                commands::write_sweep(path, &options, sweep)?;
            }
            emit(&commands::to_json(&budget)?, output.as_deref())?;
        }
        Command::Verify { trials, histograms, mc_histograms, output, common } => {
            let report = commands::verify(&AuditConfig {
                histograms,
                mc_histograms,
                mc_trials: trials,
                lambda_grid: grid,
                seed: common.seed,
                ..AuditConfig::default()
            })?;
            emit(&commands::to_json(&report)?, output.as_deref())?;
            if report.failures > 0 {
                log::error!("{} bound violations", report.failures);
                return Ok(Outcome::BoundViolation);
            }
        }
        Command::Report { files } => {
            print!("{}", commands::report(&files)?);
        }
    }
    Ok(Outcome::Success)
}

//! Command-line runner for the spde-lab checks.
//!
//! Exit status is 0 when every check passes, 1 when any check fails and 2 on
//! configuration errors (including hypothesis violations).

pub mod commands;
pub mod config;
pub mod runner;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::{ConstantsQuery, ConvergenceTarget};
use crate::config::{parse_config_text, RunConfig};
use crate::runner::{EXIT_CONFIG, EXIT_FAILED, EXIT_PASSED};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_FAILED,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "spde-lab", version, about = "Monte Carlo checks for stochastic heat equations on [0, 1]")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dirichlet heat kernel values as CSV (t,x,y,value).
    KernelTable {
        /// Times; repeat or separate by commas.
        #[arg(long = "t", value_delimiter = ',', default_value = "0.5")]
        times: Vec<f64>,
        /// Points k/(points+1) in each coordinate.
        #[arg(long, default_value_t = 9)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Table of the explicit constants.
    Constants {
        #[arg(long = "T", default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 12.0)]
        p: f64,
        #[arg(long, default_value_t = 12.0)]
        q: f64,
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        #[arg(long = "l-b", default_value_t = 0.0)]
        l_b: f64,
        #[arg(long = "l-sigma", default_value_t = 0.0)]
        l_sigma: f64,
        #[arg(long = "k-sigma", default_value_t = 1.0)]
        k_sigma: f64,
        #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
        format: TableFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solution fields of the configured scenario (one path unless --paths).
    Simulate(RunArgs),
    /// Runs the listed checks (all of them when none are given).
    Verify {
        checks: Vec<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Residual against grid refinement as CSV (nt,nx,residual,std_error,relative).
    Convergence {
        #[arg(value_enum)]
        target: Target,
        /// Levels as NTxNX pairs, e.g. 256x32,512x48.
        #[arg(long)]
        levels: Option<String>,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Factorization,
    Solver,
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub nt: Option<usize>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long = "T")]
    pub horizon: Option<f64>,
    /// Output directory; defaults to $SPDE_LAB_OUT, then ./spde-lab-out.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// csv, json or csv,json.
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Any config key, as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl RunArgs {
    /// Config file pairs, then `--set` pairs, then dedicated flags.
    pub fn pairs(&self) -> Result<Vec<(String, String)>, CliError> {
        let mut pairs = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
                parse_config_text(&text)?
            }
            None => Vec::new(),
        };
        for s in &self.set {
            let (k, v) =
                s.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
            pairs.push((k.trim().into(), v.trim().into()));
        }
        let mut flag = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k.into(), v));
            }
        };
        flag("scenario", self.scenario.clone());
        flag("seed", self.seed.map(|v| v.to_string()));
        flag("paths", self.paths.map(|v| v.to_string()));
        flag("nt", self.nt.map(|v| v.to_string()));
        flag("nx", self.nx.map(|v| v.to_string()));
        flag("T", self.horizon.map(|v| v.to_string()));
        flag("out", self.out.as_ref().map(|v| v.display().to_string()));
        flag("format", self.format.clone());
        flag("workers", self.workers.map(|v| v.to_string()));
        Ok(pairs)
    }
}

fn sink(out: &Option<PathBuf>, stdout: &mut dyn Write, body: &[u8]) -> Result<(), CliError> {
    if let Some(path) = out {
        std::fs::write(path, body).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    stdout.write_all(body).map_err(|e| CliError::Io(e.to_string()))
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<i32, CliError> {
    match command {
        Command::KernelTable { times, points, out } => {
            let mut buf = Vec::new();
            commands::kernel_table(&times, points, &mut buf)?;
            sink(&out, stdout, &buf)?;
            Ok(EXIT_PASSED)
        }
        Command::Constants { horizon, p, q, eps, l_b, l_sigma, k_sigma, format, out } => {
            let rows = commands::constants_table(&ConstantsQuery { horizon, p, q, eps, l_b, l_sigma, k_sigma })?;
            let mut buf = Vec::new();
            commands::write_constants(&rows, format == TableFormat::Json, &mut buf)?;
            sink(&out, stdout, &buf)?;
            Ok(EXIT_PASSED)
        }
        Command::Simulate(run) => {
            let mut pairs = vec![("paths".to_string(), "1".to_string())];
            pairs.extend(run.pairs()?);
            let config = RunConfig::from_pairs(pairs)?;
            let status = commands::simulate(&config)?;
            writeln!(stdout, "wrote {} path(s) to {}", config.scenario.n_paths, config.output_dir.display())
                .map_err(|e| CliError::Io(e.to_string()))?;
            Ok(status)
        }
        Command::Verify { checks, run } => {
            let mut pairs = run.pairs()?;
            if !checks.is_empty() {
                pairs.push(("checks".into(), checks.join(",")));
            }
            let config = RunConfig::from_pairs(pairs)?;
            let outcome = runner::run(&config)?;
            for (check, reports) in &outcome.reports {
                for r in reports {
                    let verdict = if r.passed { "PASS" } else { "FAIL" };
                    writeln!(
                        stdout,
                        "{check} {verdict} {}: estimate {:e} (se {:e}) vs bound {:e}",
                        r.check_name, r.empirical_estimate, r.std_error, r.theoretical_bound
                    )
                    .map_err(|e| CliError::Io(e.to_string()))?;
                }
            }
            writeln!(stdout, "manifest: {}", outcome.manifest.display()).map_err(|e| CliError::Io(e.to_string()))?;
            Ok(outcome.status)
        }
        Command::Convergence { target, levels, run } => {
            let config = RunConfig::from_pairs(run.pairs()?)?;
            let levels = levels.as_deref().map(commands::parse_levels).transpose()?;
            let target = match target {
                Target::Factorization => ConvergenceTarget::Factorization,
                Target::Solver => ConvergenceTarget::Solver,
            };
            let points = commands::convergence(&config, target, levels)?;
            let mut buf = Vec::new();
            commands::write_convergence(&points, &mut buf)?;
            std::fs::create_dir_all(&config.output_dir).map_err(|e| CliError::Io(e.to_string()))?;
            let name = match target {
                ConvergenceTarget::Factorization => "convergence_factorization.csv",
                ConvergenceTarget::Solver => "convergence_solver.csv",
            };
            sink(&Some(config.output_dir.join(name)), stdout, &buf)?;
            Ok(EXIT_PASSED)
        }
    }
}

/// Parses `args` (program name first) and runs; returns the exit status.
pub fn execute<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASSED };
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(status) => status,
        Err(e) => {
            let _ = writeln!(stderr, "spde-lab: {e}");
            e.exit_code()
        }
    }
}

//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lcqsim_core::oracle::DEFAULT_TRUNCATION_THRESHOLD;
use lcqsim_core::PolicySpec;

use crate::config::{self, Experiment, Overrides};
use crate::error::{CliError, Result};
use crate::report::{cmd_bound, cmd_capacity, cmd_oracle, cmd_run};
use crate::sweep::cmd_sweep;

#[derive(Debug, Parser)]
#[command(name = "lcqsim", version, about = "Slotted multi-queue multi-server ON-OFF connectivity simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Source {
    /// TOML configuration file.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in configuration: sym16x4_p02, sym16x4_p09 or asym16x4.
    #[arg(long, value_name = "NAME")]
    pub preset: Option<String>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "N")]
    pub horizon: Option<u64>,
    #[arg(long, value_name = "N")]
    pub warmup: Option<u64>,
}

#[derive(Debug, Args)]
pub struct Execution {
    /// Worker threads.
    #[arg(long, value_name = "N", default_value_t = default_jobs())]
    pub jobs: usize,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the configured system and write a JSON report plus CSVs.
    Run {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        exec: Execution,
        /// Policies to run (default: the configured policy).
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<String>>,
        /// Seeds per policy (default 5).
        #[arg(long, value_name = "N")]
        replications: Option<u32>,
        /// Keep every N-th slot of the occupancy series.
        #[arg(long, value_name = "N", default_value_t = 100)]
        thin: u64,
    },
    /// Sweep the arrival rate and write raw and summary CSVs.
    Sweep {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        exec: Execution,
        /// Grid values, comma separated (overrides [sweep].grid).
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<String>>,
        #[arg(long, value_name = "N")]
        replications: Option<u32>,
    },
    /// Capacity margin, worst subset and region membership.
    Capacity {
        #[command(flatten)]
        source: Source,
        /// Uniform per-queue rate (overrides the configured arrivals).
        #[arg(long, conflicts_with = "rates")]
        rate: Option<f64>,
        /// Per-queue rates, comma separated.
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
        /// Also list RHS - LHS for every subset.
        #[arg(long)]
        slack: bool,
    },
    /// Drift constants and the occupancy bound.
    Bound {
        #[command(flatten)]
        source: Source,
    },
    /// Regenerate exact oracle values for tiny systems.
    #[command(name = "oracle-golden", hide = true)]
    OracleGolden {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 40)]
        cap: u32,
        #[arg(long, default_value_t = DEFAULT_TRUNCATION_THRESHOLD)]
        threshold: f64,
    },
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn experiment(source: &Source, extra: Overrides) -> Result<Experiment> {
    let file = match (&source.config, &source.preset) {
        (Some(path), None) => config::load(path)?,
        (None, Some(name)) => config::load_preset(name)?,
        _ => return Err(CliError::Validation("give exactly one of --config or --preset".into())),
    };
    let overrides = Overrides { seed: source.seed, horizon: source.horizon, warmup: source.warmup, ..extra };
    Experiment::from_file(file, &overrides)
}

fn run_command(command: Command) -> Result<String> {
    match command {
        Command::Run { source, exec, policies, replications, thin } => {
            let mut exp = experiment(&source, Overrides::default())?;
            if let Some(r) = replications {
                if r == 0 {
                    return Err(CliError::Validation("replications: must be at least 1".into()));
                }
                exp.replications = r;
            }
            let mut specs: Vec<PolicySpec> = match policies {
                Some(names) => names.iter().map(|n| n.parse()).collect::<lcqsim_core::Result<_>>()?,
                None => vec![exp.system.policy.clone()],
            };
            specs.dedup();
            let report = cmd_run(&exp, &specs, exec.jobs, &exec.out, thin)?;
            let mut s = String::new();
            for p in &report.policies {
                s.push_str(&format!("{} {}\n", p.policy, p.verdict));
            }
            s.push_str(&format!("report: {}\n", exec.out.join("run_report.json").display()));
            Ok(s)
        }
        Command::Sweep { source, exec, grid, policies, replications } => {
            let exp = experiment(&source, Overrides { grid, policies, replications, ..Overrides::default() })?;
            if exp.sweep.is_none() {
                return Err(CliError::Validation("sweep: the configuration has no [sweep] section".into()));
            }
            let out = cmd_sweep(&exp, exec.jobs, &exec.out)?;
            Ok(format!("raw: {}\nsummary: {}\n", out.raw.display(), out.summary.display()))
        }
        Command::Capacity { source, rate, rates, slack } => {
            let exp = experiment(&source, Overrides::default())?;
            let rates = rates.or_else(|| rate.map(|r| vec![r; exp.system.num_queues]));
            cmd_capacity(&exp.system, rates, slack)
        }
        Command::Bound { source } => cmd_bound(&experiment(&source, Overrides::default())?.system),
        Command::OracleGolden { source, cap, threshold } => {
            cmd_oracle(&experiment(&source, Overrides::default())?.system, cap, threshold)
        }
    }
}

/// Parses `args`, runs the subcommand and returns the process exit code:
/// 0 on success, 1 for validation errors, 2 for runtime errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_command(cli.command) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

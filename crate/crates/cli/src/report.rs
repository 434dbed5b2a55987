//! Single runs, capacity and bound reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use lcqsim_core::capacity::{
    capacity_margin, capacity_margin_symmetric, capacity_margin_with_slack, drift_constant, is_symmetric,
    occupancy_bound, symmetric_cube_side,
};
use lcqsim_core::diagnostics::{
    aggregate_verdict, bound_check, empirical_drift, rate_conservation_residual, stability_verdict, telescoping_holds,
};
use lcqsim_core::oracle::exact_mean_occupancy;
use lcqsim_core::{run_simulation, CapacityReport, PolicySpec, RateVector, RunStats, SystemConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigFile, Experiment};
use crate::error::{CliError, Result};
use crate::format::{na_or, sig9};
use crate::sweep::policy_label;

/// Drift bins with fewer samples are reported but not judged.
pub const DRIFT_MIN_BIN_COUNT: u64 = 100;

pub const SERIES_HEADER: [&str; 4] = ["policy", "seed", "slot", "total_occupancy"];
pub const REPLICATION_HEADER: [&str; 7] = [
    "policy",
    "seed",
    "time_avg_total_occupancy",
    "growth_slope",
    "slope_std_error",
    "verdict",
    "final_total_occupancy",
];

#[derive(Debug, Clone, Serialize)]
pub struct Header {
    pub tool: &'static str,
    pub version: &'static str,
    pub generated_at_unix: u64,
}

impl Header {
    pub fn now() -> Self {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Self { tool: "lcqsim", version: env!("CARGO_PKG_VERSION"), generated_at_unix: secs }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CapacitySummary {
    pub margin_m: f64,
    /// 1-based queue indices.
    pub worst_subset: Vec<usize>,
    pub inside_closure: bool,
    pub inside_interior: bool,
    pub epsilon: f64,
    pub drift_constant_exact: f64,
    pub drift_constant_conservative: Option<f64>,
    pub bound_exact: Option<f64>,
    pub bound_conservative: Option<f64>,
}

impl CapacitySummary {
    pub fn of(system: &SystemConfig) -> Result<Self> {
        let report = margin_report(&RateVector::new(system.rates())?, system, false)?;
        let (l, k) = (system.num_queues, system.num_servers);
        let exact_s2 = system.sum_second_moments();
        let conservative_s2 = conservative_second_moment(system);
        let bound = |s2: f64| {
            if report.inside_interior {
                occupancy_bound(l, k, s2, report.margin_m).ok()
            } else {
                None
            }
        };
        Ok(Self {
            margin_m: report.margin_m,
            worst_subset: report.worst_subset.iter().map(|i| i + 1).collect(),
            inside_closure: report.inside_closure,
            inside_interior: report.inside_interior,
            epsilon: report.epsilon(l),
            drift_constant_exact: drift_constant(k, exact_s2),
            drift_constant_conservative: conservative_s2.map(|s2| drift_constant(k, s2)),
            bound_exact: bound(exact_s2),
            bound_conservative: conservative_s2.and_then(bound),
        })
    }
}

/// `L * max_i A_max^2`, or `None` when some queue has unbounded arrivals.
pub fn conservative_second_moment(system: &SystemConfig) -> Option<f64> {
    let mut worst: f64 = 0.0;
    for a in &system.arrivals {
        worst = worst.max(a.max_square()?);
    }
    Some(system.num_queues as f64 * worst)
}

fn margin_report(rates: &RateVector, system: &SystemConfig, slack: bool) -> Result<CapacityReport> {
    if slack {
        return Ok(capacity_margin_with_slack(rates, &system.connectivity)?);
    }
    Ok(match capacity_margin_symmetric(rates, &system.connectivity)? {
        Some(r) => r,
        None => capacity_margin(rates, &system.connectivity)?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftSummary {
    pub bin_width: u64,
    pub threshold: f64,
    pub bins_above: usize,
    pub bins_checked: usize,
    pub min_bin_count: u64,
    pub negative_above_threshold: bool,
    pub exceeding_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub rate_residuals: Vec<f64>,
    pub max_abs_rate_residual: f64,
    pub telescoping_holds: bool,
    pub idle_fraction: f64,
    /// Present only inside the capacity interior.
    pub drift: Option<DriftSummary>,
    pub within_bound: Option<bool>,
    pub bound_ratio: Option<f64>,
}

impl Diagnostics {
    pub fn of(stats: &RunStats, capacity: &CapacitySummary) -> Result<Self> {
        let rate_residuals = rate_conservation_residual(stats);
        let max_abs_rate_residual = rate_residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let drift = if capacity.inside_interior {
            let r = empirical_drift(&stats.drift_samples(), capacity.epsilon, capacity.drift_constant_exact)?;
            Some(DriftSummary {
                bin_width: r.bin_width,
                threshold: r.threshold,
                bins_above: r.bins_above,
                bins_checked: r.bins_checked(DRIFT_MIN_BIN_COUNT),
                min_bin_count: DRIFT_MIN_BIN_COUNT,
                negative_above_threshold: r.negative_above_threshold(DRIFT_MIN_BIN_COUNT),
                exceeding_fraction: r.exceeding_fraction,
            })
        } else {
            None
        };
        let check = capacity.bound_exact.map(|b| bound_check(stats, b));
        let server_slots = stats.measured_slots * stats.num_servers as u64;
        Ok(Self {
            rate_residuals,
            max_abs_rate_residual,
            telescoping_holds: telescoping_holds(stats),
            idle_fraction: stats.window_idle_server_slots as f64 / server_slots as f64,
            drift,
            within_bound: check.map(|c| c.within),
            bound_ratio: check.map(|c| c.ratio),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicationReport {
    pub seed: u64,
    pub estimate: EstimateJson,
    pub digest: String,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateJson {
    pub time_avg_total_occupancy: f64,
    pub growth_slope: f64,
    pub slope_std_error: f64,
    pub third_quarter_mean: f64,
    pub fourth_quarter_mean: f64,
    pub final_total_occupancy: u64,
    pub verdict: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyReport {
    pub policy: String,
    pub verdict: &'static str,
    pub replications: Vec<ReplicationReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub header: Header,
    pub config: ConfigFile,
    pub capacity: CapacitySummary,
    pub policies: Vec<PolicyReport>,
    pub csv: Vec<PathBuf>,
}

struct RunOutcome {
    policy: String,
    seed: u64,
    stats: RunStats,
}

/// Runs every policy for `exp.replications` seeds and writes the report and
/// CSVs into `out`. `thin` keeps every `thin`-th slot of the occupancy series.
pub fn cmd_run(exp: &Experiment, policies: &[PolicySpec], jobs: usize, out: &Path, thin: u64) -> Result<RunReport> {
    if thin == 0 {
        return Err(CliError::Validation("thin: must be at least 1".into()));
    }
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let capacity = CapacitySummary::of(&exp.system)?;
    let tasks: Vec<(&PolicySpec, u64)> =
        policies.iter().flat_map(|p| (0..exp.replications).map(move |r| (p, exp.replication_seed(r)))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    let outcomes: Result<Vec<RunOutcome>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(policy, seed)| {
                let config = SystemConfig { policy: policy.clone(), seed, ..exp.system.clone() };
                Ok(RunOutcome { policy: policy_label(policy), seed, stats: run_simulation(&config)? })
            })
            .collect()
    });
    let outcomes = outcomes?;

    let series_path = out.join("run_series.csv");
    let reps_path = out.join("run_replications.csv");
    let mut series = csv::Writer::from_path(&series_path)?;
    series.write_record(SERIES_HEADER)?;
    let mut reps = csv::Writer::from_path(&reps_path)?;
    reps.write_record(REPLICATION_HEADER)?;

    let mut reports: Vec<PolicyReport> = Vec::new();
    for outcome in &outcomes {
        let est = stability_verdict(&outcome.stats, &exp.verdict);
        let n = outcome.stats.occupancy.len();
        for (idx, occ) in outcome.stats.occupancy.iter().enumerate() {
            let slot = exp.system.warmup + 1 + idx as u64;
            if slot.is_multiple_of(thin) || idx + 1 == n {
                series.write_record([
                    outcome.policy.clone(),
                    outcome.seed.to_string(),
                    slot.to_string(),
                    occ.to_string(),
                ])?;
            }
        }
        reps.write_record([
            outcome.policy.clone(),
            outcome.seed.to_string(),
            sig9(est.time_avg_total_occupancy),
            sig9(est.growth_slope),
            sig9(est.slope_std_error),
            est.verdict.to_string(),
            est.final_total_occupancy.to_string(),
        ])?;
        let rep = ReplicationReport {
            seed: outcome.seed,
            estimate: EstimateJson {
                time_avg_total_occupancy: est.time_avg_total_occupancy,
                growth_slope: est.growth_slope,
                slope_std_error: est.slope_std_error,
                third_quarter_mean: est.third_quarter_mean,
                fourth_quarter_mean: est.fourth_quarter_mean,
                final_total_occupancy: est.final_total_occupancy,
                verdict: est.verdict.as_str(),
            },
            digest: format!("{:016x}", outcome.stats.digest()),
            diagnostics: Diagnostics::of(&outcome.stats, &capacity)?,
        };
        match reports.last_mut() {
            Some(last) if last.policy == outcome.policy => last.replications.push(rep),
            _ => reports.push(PolicyReport { policy: outcome.policy.clone(), verdict: "", replications: vec![rep] }),
        }
    }
    series.flush().map_err(|e| CliError::io(&series_path, e))?;
    reps.flush().map_err(|e| CliError::io(&reps_path, e))?;

    for (report, outcome_group) in reports.iter_mut().zip(outcomes.chunks(exp.replications as usize)) {
        let estimates: Vec<_> = outcome_group.iter().map(|o| stability_verdict(&o.stats, &exp.verdict)).collect();
        report.verdict = aggregate_verdict(&estimates, &exp.verdict).as_str();
    }

    let report = RunReport {
        header: Header::now(),
        config: exp.resolved.clone(),
        capacity,
        policies: reports,
        csv: vec![series_path, reps_path],
    };
    let json_path = out.join("run_report.json");
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(format!("json: {e}")))?;
    fs::write(&json_path, json).map_err(|e| CliError::io(&json_path, e))?;
    Ok(report)
}

fn subset_label(mask_or_members: impl IntoIterator<Item = usize>) -> String {
    let items: Vec<String> = mask_or_members.into_iter().map(|i| (i + 1).to_string()).collect();
    format!("[{}]", items.join(", "))
}

/// Structured text capacity report for `rates` (defaults to the configured means).
pub fn cmd_capacity(system: &SystemConfig, rates: Option<Vec<f64>>, slack: bool) -> Result<String> {
    let rates = RateVector::new(rates.unwrap_or_else(|| system.rates()))?;
    if rates.len() != system.num_queues {
        return Err(CliError::Validation(format!(
            "rates: expected {} entries (num_queues), found {}",
            system.num_queues,
            rates.len()
        )));
    }
    if slack && system.num_queues > 16 {
        return Err(CliError::Validation("slack: listing is limited to 16 queues".into()));
    }
    let report = margin_report(&rates, system, slack)?;
    let mut s = String::new();
    let _ = writeln!(s, "num_queues = {}", system.num_queues);
    let _ = writeln!(s, "num_servers = {}", system.num_servers);
    let _ = writeln!(s, "margin_m = {}", sig9(report.margin_m));
    let _ = writeln!(s, "worst_subset = {}", subset_label(report.worst_subset.iter().copied()));
    let _ = writeln!(s, "inside_closure = {}", report.inside_closure);
    let _ = writeln!(s, "inside_interior = {}", report.inside_interior);
    let _ = writeln!(s, "symmetric = {}", is_symmetric(&rates, &system.connectivity));
    if let Some(p) = uniform_p(system) {
        let side = symmetric_cube_side(system.num_queues, system.num_servers, p);
        let _ = writeln!(s, "cube_side = {}", sig9(side));
    }
    if let Some(list) = &report.per_subset_slack {
        let _ = writeln!(s, "\n[slack]");
        for &(mask, slack) in list {
            let members = (0..system.num_queues).filter(|i| mask >> i & 1 == 1);
            let _ = writeln!(s, "\"{}\" = {}", subset_label(members), sig9(slack));
        }
    }
    Ok(s)
}

fn uniform_p(system: &SystemConfig) -> Option<f64> {
    let p = system.connectivity.prob(0, 0);
    let uniform = (0..system.num_queues).all(|i| system.connectivity.row(i).iter().all(|&q| q == p));
    uniform.then_some(p)
}

/// Structured text report of `B`, `eps` and both forms of the occupancy bound.
pub fn cmd_bound(system: &SystemConfig) -> Result<String> {
    let c = CapacitySummary::of(system)?;
    if !c.inside_interior {
        return Err(CliError::Runtime(format!(
            "rate vector is outside the capacity interior (m = {}); the bound is undefined",
            sig9(c.margin_m)
        )));
    }
    let mut s = String::new();
    let _ = writeln!(s, "margin_m = {}", sig9(c.margin_m));
    let _ = writeln!(s, "epsilon = {}", sig9(c.epsilon));
    let _ = writeln!(s, "sum_second_moments = {}", sig9(system.sum_second_moments()));
    let _ = writeln!(s, "drift_constant_exact = {}", sig9(c.drift_constant_exact));
    let _ = writeln!(s, "drift_constant_conservative = {}", na_or(c.drift_constant_conservative));
    let _ = writeln!(s, "bound_exact = {}", na_or(c.bound_exact));
    let _ = writeln!(s, "bound_conservative = {}", na_or(c.bound_conservative));
    Ok(s)
}

/// Exact mean occupancy of a tiny system from the truncated chain.
pub fn cmd_oracle(system: &SystemConfig, cap: u32, threshold: f64) -> Result<String> {
    let rates: Vec<f64> = system
        .arrivals
        .iter()
        .map(|a| match a {
            lcqsim_core::ArrivalModel::Bernoulli { rate } => Ok(*rate),
            _ => Err(CliError::Validation("arrivals: the oracle needs Bernoulli arrivals".into())),
        })
        .collect::<Result<_>>()?;
    let r = exact_mean_occupancy(&system.connectivity, &rates, &system.policy, cap, threshold)?;
    let mut s = String::new();
    let _ = writeln!(s, "mean_occupancy = {:.12}", r.mean_occupancy);
    let _ = writeln!(s, "truncation_mass = {:e}", r.truncation_mass);
    let _ = writeln!(s, "cap = {cap}");
    let _ = writeln!(s, "num_states = {}", r.num_states);
    let _ = writeln!(s, "iterations = {}", r.iterations);
    Ok(s)
}

//! Rate sweeps: every (policy, grid value, replication) as an independent run.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use lcqsim_core::capacity::{capacity_margin, capacity_margin_symmetric, occupancy_bound};
use lcqsim_core::diagnostics::{aggregate_verdict, stability_verdict};
use lcqsim_core::{run_simulation, CapacityReport, PolicySpec, RateVector, StabilityEstimate, SystemConfig, Verdict};
use rayon::prelude::*;

use crate::config::Experiment;
use crate::error::{CliError, Result};
use crate::format::{na_or, parse_sig9, sig9};

pub const RAW_HEADER: [&str; 8] =
    ["policy", "lambda", "seed", "time_avg_total_occupancy", "growth_slope", "verdict", "m", "bound"];

pub const SUMMARY_HEADER: [&str; 11] = [
    "policy",
    "lambda",
    "replications",
    "mean_time_avg_total_occupancy",
    "mean_growth_slope",
    "bounded",
    "growing",
    "inconclusive",
    "verdict",
    "m",
    "bound",
];

/// Capacity quantities of one grid point, shared by all its runs.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCapacity {
    pub margin_m: f64,
    /// `B / eps` with the exact second moments; `None` outside the interior.
    pub bound: Option<f64>,
}

/// Margin and bound for a system, using the by-size shortcut when symmetric.
pub fn point_capacity(system: &SystemConfig) -> Result<(CapacityReport, Option<f64>)> {
    let rates = RateVector::new(system.rates())?;
    let report = match capacity_margin_symmetric(&rates, &system.connectivity)? {
        Some(r) => r,
        None => capacity_margin(&rates, &system.connectivity)?,
    };
    let bound = if report.inside_interior {
        Some(occupancy_bound(system.num_queues, system.num_servers, system.sum_second_moments(), report.margin_m)?)
    } else {
        None
    };
    Ok((report, bound))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub policy: String,
    pub lambda: f64,
    pub seed: u64,
    pub estimate: StabilityEstimate,
    pub capacity: PointCapacity,
}

impl SweepRow {
    pub fn record(&self) -> [String; 8] {
        [
            self.policy.clone(),
            sig9(self.lambda),
            self.seed.to_string(),
            sig9(self.estimate.time_avg_total_occupancy),
            sig9(self.estimate.growth_slope),
            self.estimate.verdict.to_string(),
            sig9(self.capacity.margin_m),
            na_or(self.capacity.bound),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub policy: String,
    pub lambda: f64,
    pub replications: usize,
    pub mean_time_avg_total_occupancy: f64,
    pub mean_growth_slope: f64,
    pub bounded: usize,
    pub growing: usize,
    pub inconclusive: usize,
    pub verdict: Verdict,
    pub capacity: PointCapacity,
}

impl SummaryRow {
    pub fn record(&self) -> [String; 11] {
        [
            self.policy.clone(),
            sig9(self.lambda),
            self.replications.to_string(),
            sig9(self.mean_time_avg_total_occupancy),
            sig9(self.mean_growth_slope),
            self.bounded.to_string(),
            self.growing.to_string(),
            self.inconclusive.to_string(),
            self.verdict.to_string(),
            sig9(self.capacity.margin_m),
            na_or(self.capacity.bound),
        ]
    }
}

pub fn policy_label(spec: &PolicySpec) -> String {
    spec.to_string()
}

fn sort_rows(rows: &mut [SweepRow]) {
    rows.sort_by(|a, b| a.policy.cmp(&b.policy).then(a.lambda.total_cmp(&b.lambda)).then(a.seed.cmp(&b.seed)));
}

/// Runs the whole sweep on up to `jobs` threads.
///
/// When `partial` is given, each finished run is appended to that file and
/// flushed immediately, so an interrupted sweep keeps its completed points.
pub fn run_sweep(exp: &Experiment, jobs: usize, partial: Option<&Path>) -> Result<Vec<SweepRow>> {
    let spec = exp.sweep.as_ref().ok_or_else(|| CliError::Validation("sweep: missing [sweep] section".into()))?;
    let mut points = Vec::with_capacity(spec.grid.len());
    for &value in &spec.grid {
        let system = exp.at_grid_value(value)?;
        let (report, bound) = point_capacity(&system)?;
        points.push((value, system, PointCapacity { margin_m: report.margin_m, bound }));
    }
    let mut tasks = Vec::new();
    for policy in &spec.policies {
        for point in &points {
            for r in 0..spec.replications {
                tasks.push((policy, point, exp.replication_seed(r)));
            }
        }
    }

    let writer = match partial {
        Some(path) => {
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(RAW_HEADER)?;
            w.flush().map_err(|e| CliError::io(path, e))?;
            Some(Mutex::new(w))
        }
        None => None,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    let rows: Result<Vec<SweepRow>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(policy, (value, system, capacity), seed)| {
                let config = SystemConfig { policy: policy.clone(), seed, ..system.clone() };
                let stats = run_simulation(&config)?;
                let row = SweepRow {
                    policy: policy_label(policy),
                    lambda: *value,
                    seed,
                    estimate: stability_verdict(&stats, &exp.verdict),
                    capacity: capacity.clone(),
                };
                if let Some(w) = &writer {
                    let mut w = w.lock().expect("writer lock");
                    w.write_record(row.record())?;
                    w.flush().map_err(|e| CliError::Runtime(format!("flush: {e}")))?;
                }
                Ok(row)
            })
            .collect()
    });
    let mut rows = rows?;
    sort_rows(&mut rows);
    Ok(rows)
}

/// Per-(policy, lambda) means over the replications.
///
/// The means are taken over the values as written to the raw CSV (9
/// significant digits), so they can be recomputed exactly from that file.
pub fn summarize(rows: &[SweepRow], exp: &Experiment) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let head = &rows[start];
        let end =
            start + rows[start..].iter().take_while(|r| r.policy == head.policy && r.lambda == head.lambda).count();
        let group = &rows[start..end];
        let n = group.len();
        let mean = |f: fn(&SweepRow) -> f64| group.iter().map(|r| parse_sig9(&sig9(f(r)))).sum::<f64>() / n as f64;
        let estimates: Vec<StabilityEstimate> = group.iter().map(|r| r.estimate).collect();
        let count = |v: Verdict| group.iter().filter(|r| r.estimate.verdict == v).count();
        out.push(SummaryRow {
            policy: head.policy.clone(),
            lambda: head.lambda,
            replications: n,
            mean_time_avg_total_occupancy: mean(|r| r.estimate.time_avg_total_occupancy),
            mean_growth_slope: mean(|r| r.estimate.growth_slope),
            bounded: count(Verdict::Bounded),
            growing: count(Verdict::Growing),
            inconclusive: count(Verdict::Inconclusive),
            verdict: aggregate_verdict(&estimates, &exp.verdict),
            capacity: head.capacity.clone(),
        });
        start = end;
    }
    out
}

pub fn write_raw(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RAW_HEADER)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub raw: PathBuf,
    pub summary: PathBuf,
    pub rows: Vec<SweepRow>,
    pub summary_rows: Vec<SummaryRow>,
}

/// Runs the sweep and writes `sweep_raw.csv` and `sweep_summary.csv` into `out`.
pub fn cmd_sweep(exp: &Experiment, jobs: usize, out: &Path) -> Result<SweepOutput> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let partial = out.join("sweep_raw.partial.csv");
    let rows = run_sweep(exp, jobs, Some(&partial))?;
    let raw = out.join("sweep_raw.csv");
    let summary = out.join("sweep_summary.csv");
    write_raw(&raw, &rows)?;
    let summary_rows = summarize(&rows, exp);
    write_summary(&summary, &summary_rows)?;
    fs::remove_file(&partial).map_err(|e| CliError::io(&partial, e))?;
    let mut config = File::create(out.join("sweep_config.toml")).map_err(|e| CliError::io(out, e))?;
    config.write_all(exp.resolved_toml().as_bytes()).map_err(|e| CliError::io(out, e))?;
    Ok(SweepOutput { raw, summary, rows, summary_rows })
}
